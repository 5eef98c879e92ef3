pub mod amf;
pub mod cli;
pub mod error;
pub mod evalx;
pub mod field;
pub mod io;
pub mod likelihood;
pub mod par;
pub mod posterior;
pub mod rof;
pub mod synth;
