//! Packet framing and the constrained link it travels over.

mod link;
mod packet;

pub use link::{
    transmit, DeviceBuffer, Delivery, Dropout, LinkError, LinkModel, LinkSim, LinkStats, SeqTracker, TransmitError,
    Transmission, BLE_CAPACITY_BPS, DEFAULT_BUFFER_BITS,
};
pub use packet::{
    flags, read_stream, split_packet, DecodeError, FramingError, Packet, StreamItem, BYTES_PER_CODE, CRC_LEN, HEADER_LEN,
    MAGIC, MAX_FRAME_WIDTH, OVERHEAD, VERSION,
};
