//! Host side of the biosignal platform twin: link termination, recording,
//! display transforms, host classification and the console channel.

pub mod alarm;
pub mod analyze;
pub mod classify;
pub mod console;
pub mod export;
pub mod live;
pub mod reassembly;
pub mod recording;
pub mod server;
pub mod session;
