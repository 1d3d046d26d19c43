//! Datagram transports and the receive pipeline that feeds a state store.
//!
//! Two transports sit behind [`Transport`]: an in-process bus for
//! deterministic single-process runs and IPv6 UDP multicast for one process
//! per vehicle. Both deliver raw datagrams; [`FrameReceiver`] decodes them,
//! drops the receiver's own frames, applies the loss model and hands the rest
//! to the store through its receive gate.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::io;
use std::net::{Ipv6Addr, SocketAddr, SocketAddrV6, UdpSocket};
use std::rc::Rc;
use std::time::Duration;

use socket2::{Domain, Protocol, Socket, Type};
use thiserror::Error;

use super::codec::{decode_bsm, CodecError, WireFrame, FRAME_LEN};
use super::loss::LossModel;
use crate::model::{InsertOutcome, SharedStateStore, StateStore, VehicleId, VehicleState};
use crate::policy::RxGate;

/// Link-local scope group used when none is configured.
pub const DEFAULT_GROUP: Ipv6Addr = Ipv6Addr::new(0xff02, 0, 0, 0, 0, 0, 0x0001, 0x7f01);
pub const DEFAULT_PORT: u16 = 47001;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> NetError {
    let context = context.into();
    move |source| NetError::Io { context, source }
}

pub trait Transport {
    fn send(&mut self, frame: &WireFrame) -> Result<(), NetError>;
    /// Drains every datagram currently available without blocking.
    fn poll(&mut self) -> Result<Vec<Vec<u8>>, NetError>;
}

/// Per-receiver delivery counters.
///
/// `offered = accepted + lost + gate_rejected + stale_rejected + invalid`
/// always holds; malformed, foreign and self frames are counted separately
/// and never reach the store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RxStats {
    pub offered: u64,
    pub accepted: u64,
    pub lost: u64,
    pub gate_rejected: u64,
    pub stale_rejected: u64,
    pub invalid: u64,
    pub malformed: u64,
    pub foreign: u64,
    pub self_filtered: u64,
}

impl RxStats {
    pub fn is_conserved(&self) -> bool {
        self.offered
            == self.accepted + self.lost + self.gate_rejected + self.stale_rejected + self.invalid
    }

    /// Frames dropped after decoding, for any reason.
    pub fn dropped(&self) -> u64 {
        self.lost + self.gate_rejected + self.stale_rejected + self.invalid
    }
}

/// Decode, self-filter and loss stage in front of a state store.
#[derive(Debug, Clone)]
pub struct FrameReceiver {
    own_id: VehicleId,
    loss: LossModel,
    stats: RxStats,
}

impl FrameReceiver {
    pub fn new(own_id: VehicleId, loss: LossModel) -> Self {
        Self {
            own_id,
            loss,
            stats: RxStats::default(),
        }
    }

    pub fn stats(&self) -> &RxStats {
        &self.stats
    }

    /// Returns the decoded state when it survives decoding, the self filter
    /// and the loss draw.
    pub fn receive(&mut self, datagram: &[u8]) -> Option<VehicleState> {
        let state = match decode_bsm(datagram) {
            Ok(s) => s,
            Err(CodecError::Foreign) => {
                self.stats.foreign += 1;
                return None;
            }
            Err(_) => {
                self.stats.malformed += 1;
                return None;
            }
        };
        if state.vehicle_id == self.own_id {
            self.stats.self_filtered += 1;
            return None;
        }
        self.stats.offered += 1;
        if !self.loss.deliver(datagram) {
            self.stats.lost += 1;
            return None;
        }
        Some(state)
    }

    pub fn record(&mut self, outcome: InsertOutcome) {
        match outcome {
            InsertOutcome::Accepted => self.stats.accepted += 1,
            InsertOutcome::GateRejected => self.stats.gate_rejected += 1,
            InsertOutcome::Stale => self.stats.stale_rejected += 1,
            InsertOutcome::Invalid => self.stats.invalid += 1,
        }
    }

    pub fn deliver<G: RxGate + ?Sized>(
        &mut self,
        datagram: &[u8],
        store: &mut StateStore,
        gate: &G,
    ) -> Option<InsertOutcome> {
        let state = self.receive(datagram)?;
        let outcome = store.insert(state, gate);
        self.record(outcome);
        Some(outcome)
    }

    pub fn deliver_shared<G: RxGate + ?Sized>(
        &mut self,
        datagram: &[u8],
        store: &SharedStateStore,
        gate: &G,
    ) -> Option<InsertOutcome> {
        let state = self.receive(datagram)?;
        let outcome = store.insert(state, gate);
        self.record(outcome);
        Some(outcome)
    }
}

type Inboxes = Rc<RefCell<Vec<VecDeque<Vec<u8>>>>>;

/// In-process broadcast medium. Every send is queued for every endpoint,
/// including the sender, like a multicast socket with loopback enabled.
#[derive(Debug, Clone)]
pub struct VirtualNetwork {
    inboxes: Inboxes,
}

impl VirtualNetwork {
    pub fn new(endpoints: usize) -> Self {
        Self {
            inboxes: Rc::new(RefCell::new(vec![VecDeque::new(); endpoints])),
        }
    }

    pub fn endpoint(&self, id: VehicleId) -> VirtualEndpoint {
        assert!(id.index() < self.inboxes.borrow().len(), "no endpoint {id}");
        VirtualEndpoint {
            id,
            inboxes: Rc::clone(&self.inboxes),
        }
    }

    /// Queues raw octets for every endpoint. Used to inject foreign traffic.
    pub fn inject(&self, datagram: &[u8]) {
        for inbox in self.inboxes.borrow_mut().iter_mut() {
            inbox.push_back(datagram.to_vec());
        }
    }
}

#[derive(Debug, Clone)]
pub struct VirtualEndpoint {
    id: VehicleId,
    inboxes: Inboxes,
}

impl VirtualEndpoint {
    pub fn id(&self) -> VehicleId {
        self.id
    }
}

impl Transport for VirtualEndpoint {
    fn send(&mut self, frame: &WireFrame) -> Result<(), NetError> {
        for inbox in self.inboxes.borrow_mut().iter_mut() {
            inbox.push_back(frame.as_ref().to_vec());
        }
        Ok(())
    }

    fn poll(&mut self) -> Result<Vec<Vec<u8>>, NetError> {
        Ok(self.inboxes.borrow_mut()[self.id.index()]
            .drain(..)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MulticastConfig {
    pub group: Ipv6Addr,
    pub port: u16,
    /// Interface index; 0 lets the kernel choose.
    pub interface: u32,
}

impl Default for MulticastConfig {
    fn default() -> Self {
        Self {
            group: DEFAULT_GROUP,
            port: DEFAULT_PORT,
            interface: 0,
        }
    }
}

/// IPv6 UDP multicast endpoint. Several endpoints may share a host and port.
#[derive(Debug)]
pub struct MulticastTransport {
    socket: UdpSocket,
    destination: SocketAddrV6,
}

impl MulticastTransport {
    pub fn open(config: &MulticastConfig) -> Result<Self, NetError> {
        if !config.group.is_multicast() {
            return Err(NetError::Io {
                context: format!("group {}", config.group),
                source: io::Error::new(io::ErrorKind::InvalidInput, "not a multicast address"),
            });
        }
        let socket = Socket::new(Domain::IPV6, Type::DGRAM, Some(Protocol::UDP))
            .map_err(io_err("create socket"))?;
        socket
            .set_reuse_address(true)
            .map_err(io_err("SO_REUSEADDR"))?;
        socket.set_only_v6(true).map_err(io_err("IPV6_V6ONLY"))?;
        let bind = SocketAddr::from(SocketAddrV6::new(Ipv6Addr::UNSPECIFIED, config.port, 0, 0));
        socket
            .bind(&bind.into())
            .map_err(io_err(format!("bind [::]:{}", config.port)))?;
        socket
            .join_multicast_v6(&config.group, config.interface)
            .map_err(io_err(format!("join {}", config.group)))?;
        socket
            .set_multicast_loop_v6(true)
            .map_err(io_err("IPV6_MULTICAST_LOOP"))?;
        if config.interface != 0 {
            socket
                .set_multicast_if_v6(config.interface)
                .map_err(io_err("IPV6_MULTICAST_IF"))?;
        }
        let socket: UdpSocket = socket.into();
        Ok(Self {
            socket,
            destination: SocketAddrV6::new(config.group, config.port, 0, config.interface),
        })
    }

    /// Second handle on the same socket, e.g. for a receive thread.
    pub fn try_clone(&self) -> Result<Self, NetError> {
        Ok(Self {
            socket: self.socket.try_clone().map_err(io_err("clone socket"))?,
            destination: self.destination,
        })
    }

    /// Blocks up to `timeout` for one datagram.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Vec<u8>>, NetError> {
        self.socket
            .set_nonblocking(false)
            .map_err(io_err("set blocking"))?;
        self.socket
            .set_read_timeout(Some(timeout.max(Duration::from_micros(1))))
            .map_err(io_err("set read timeout"))?;
        let mut buf = [0u8; 2048];
        match self.socket.recv_from(&mut buf) {
            Ok((n, _)) => Ok(Some(buf[..n].to_vec())),
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                Ok(None)
            }
            Err(e) => Err(io_err("recv")(e)),
        }
    }

    pub fn send_raw(&self, datagram: &[u8]) -> Result<(), NetError> {
        self.socket
            .send_to(datagram, self.destination)
            .map_err(io_err(format!("send to {}", self.destination)))?;
        Ok(())
    }
}

impl Transport for MulticastTransport {
    fn send(&mut self, frame: &WireFrame) -> Result<(), NetError> {
        debug_assert_eq!(frame.as_ref().len(), FRAME_LEN);
        self.send_raw(frame.as_ref())
    }

    fn poll(&mut self) -> Result<Vec<Vec<u8>>, NetError> {
        self.socket
            .set_nonblocking(true)
            .map_err(io_err("set nonblocking"))?;
        let mut out = Vec::new();
        let mut buf = [0u8; 2048];
        loop {
            match self.socket.recv_from(&mut buf) {
                Ok((n, _)) => out.push(buf[..n].to_vec()),
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                Err(e) => return Err(io_err("recv")(e)),
            }
        }
        Ok(out)
    }
}
