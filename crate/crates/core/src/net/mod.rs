//! V2V layer: wire codec, loss injection and datagram transports.

pub mod codec;
pub mod loss;
pub mod transport;

pub use codec::{decode_bsm, encode_bsm, CodecError, WireFrame, FRAME_LEN, MAGIC, VERSION};
pub use loss::{loss_gate, LossModel, PerOutOfRange};
pub use transport::{
    FrameReceiver, MulticastConfig, MulticastTransport, NetError, RxStats, Transport,
    VirtualEndpoint, VirtualNetwork, DEFAULT_GROUP, DEFAULT_PORT,
};
