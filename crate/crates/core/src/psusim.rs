//! Framed drain-supply protocol and a simulated programmable supply.
//!
//! Wire unit (13 bytes, fixed length, no delimiter):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 0..4  | extended id, big endian, top 3 bits zero  |
//! | 4     | DLC, always 8                             |
//! | 5..13 | payload, zero padded                      |
//!
//! | id           | command     | payload                                   |
//! |--------------|-------------|-------------------------------------------|
//! | `0x10018000` | SET_VOLTAGE | byte0 = 0x01, bytes4..8 = u32 BE mV       |
//! | `0x10018001` | READ        | byte0 = register                          |
//! | `0x10018002` | REPLY       | byte0 = register, bytes4..8 = u32 BE milli-units |
//! | `0x10018003` | NACK        | byte0 = error code                        |

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::pamodel::{VDD_MAX, VDD_MIN};

pub const FRAME_LEN: usize = 13;
pub const DLC: u8 = 8;
pub const ID_SET_VOLTAGE: u32 = 0x1001_8000;
pub const ID_READ: u32 = 0x1001_8001;
pub const ID_REPLY: u32 = 0x1001_8002;
pub const ID_NACK: u32 = 0x1001_8003;
pub const EXTENDED_ID_MASK: u32 = (1 << 29) - 1;
pub const DEFAULT_SLEW_V_PER_S: f64 = 50.0;
pub const DEFAULT_POLL: Duration = Duration::from_millis(10);

pub type Frame = [u8; FRAME_LEN];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("frame is {0} bytes, expected {FRAME_LEN}")]
    BadLength(usize),
    #[error("DLC {0}, expected {DLC}")]
    BadDlc(u8),
    #[error("unknown frame id {0:#010x}")]
    UnknownId(u32),
    #[error("unknown register {0:#04x}")]
    UnknownRegister(u8),
}

impl ProtocolError {
    pub fn nack_code(&self) -> u8 {
        match self {
            ProtocolError::BadLength(_) | ProtocolError::BadDlc(_) => NackCode::BadFrame as u8,
            ProtocolError::UnknownId(_) => NackCode::UnknownId as u8,
            ProtocolError::UnknownRegister(_) => NackCode::UnknownRegister as u8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum NackCode {
    BadFrame = 0x01,
    UnknownId = 0x02,
    UnknownRegister = 0x03,
    /// A REPLY or NACK frame sent to the supply.
    UnexpectedCommand = 0x04,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PsuError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("supply rejected the request with code {0:#04x}")]
    Nack(u8),
    #[error("unexpected reply {0:?}")]
    UnexpectedReply(Command),
    #[error("transport: {0}")]
    Io(String),
}

impl From<io::Error> for PsuError {
    fn from(e: io::Error) -> Self {
        PsuError::Io(e.to_string())
    }
}

/// 29-bit extended id with an 8-byte payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CanFrame {
    id: u32,
    data: [u8; 8],
}

impl CanFrame {
    /// `None` when the id does not fit in 29 bits.
    pub fn new(id: u32, data: [u8; 8]) -> Option<Self> {
        (id <= EXTENDED_ID_MASK).then_some(Self { id, data })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn data(&self) -> &[u8; 8] {
        &self.data
    }

    pub fn to_bytes(&self) -> Frame {
        let mut out = [0u8; FRAME_LEN];
        out[..4].copy_from_slice(&self.id.to_be_bytes());
        out[4] = DLC;
        out[5..].copy_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() != FRAME_LEN {
            return Err(ProtocolError::BadLength(bytes.len()));
        }
        let id = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        if id > EXTENDED_ID_MASK {
            return Err(ProtocolError::UnknownId(id));
        }
        if bytes[4] != DLC {
            return Err(ProtocolError::BadDlc(bytes[4]));
        }
        let mut data = [0u8; 8];
        data.copy_from_slice(&bytes[5..]);
        Ok(Self { id, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Register {
    Voltage = 0x01,
    Current = 0x02,
}

impl TryFrom<u8> for Register {
    type Error = ProtocolError;

    fn try_from(v: u8) -> Result<Self, ProtocolError> {
        match v {
            0x01 => Ok(Register::Voltage),
            0x02 => Ok(Register::Current),
            other => Err(ProtocolError::UnknownRegister(other)),
        }
    }
}

/// Values are milli-units: millivolts for voltage, milliamperes for current.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SetVoltage { millivolts: u32 },
    Read(Register),
    Reply { register: Register, value: u32 },
    Nack(u8),
}

impl Command {
    pub fn to_frame(&self) -> CanFrame {
        let mut data = [0u8; 8];
        let id = match *self {
            Command::SetVoltage { millivolts } => {
                data[0] = Register::Voltage as u8;
                data[4..].copy_from_slice(&millivolts.to_be_bytes());
                ID_SET_VOLTAGE
            }
            Command::Read(r) => {
                data[0] = r as u8;
                ID_READ
            }
            Command::Reply { register, value } => {
                data[0] = register as u8;
                data[4..].copy_from_slice(&value.to_be_bytes());
                ID_REPLY
            }
            Command::Nack(code) => {
                data[0] = code;
                ID_NACK
            }
        };
        CanFrame { id, data }
    }

    pub fn from_frame(f: &CanFrame) -> Result<Self, ProtocolError> {
        let d = f.data;
        let value = u32::from_be_bytes([d[4], d[5], d[6], d[7]]);
        match f.id {
            ID_SET_VOLTAGE => match Register::try_from(d[0])? {
                Register::Voltage => Ok(Command::SetVoltage { millivolts: value }),
                Register::Current => Err(ProtocolError::UnknownRegister(d[0])),
            },
            ID_READ => Ok(Command::Read(Register::try_from(d[0])?)),
            ID_REPLY => Ok(Command::Reply {
                register: Register::try_from(d[0])?,
                value,
            }),
            ID_NACK => Ok(Command::Nack(d[0])),
            other => Err(ProtocolError::UnknownId(other)),
        }
    }

    pub fn set_volts(v: f64) -> Self {
        Command::SetVoltage {
            millivolts: to_milli(v),
        }
    }
}

pub fn encode(cmd: &Command) -> Frame {
    cmd.to_frame().to_bytes()
}

pub fn decode(bytes: &[u8]) -> Result<Command, ProtocolError> {
    Command::from_frame(&CanFrame::from_bytes(bytes)?)
}

fn to_milli(v: f64) -> u32 {
    (v * 1000.0).round().clamp(0.0, f64::from(u32::MAX)) as u32
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsuState {
    pub set_voltage_v: f64,
    pub actual_voltage_v: f64,
    pub load_current_a: f64,
    pub slew_v_per_s: f64,
    pub online: bool,
}

impl PsuState {
    pub fn new(initial_v: f64, slew_v_per_s: f64) -> Self {
        let v = initial_v.clamp(VDD_MIN, VDD_MAX);
        Self {
            set_voltage_v: v,
            actual_voltage_v: v,
            load_current_a: 0.0,
            slew_v_per_s,
            online: true,
        }
    }

    /// Apply one incoming frame; returns the response frame.
    /// Malformed frames leave the state untouched and produce a NACK.
    pub fn handle(&mut self, bytes: &[u8]) -> Frame {
        let reply = match decode(bytes) {
            Ok(Command::SetVoltage { millivolts }) => {
                let v = (f64::from(millivolts) / 1000.0).clamp(VDD_MIN, VDD_MAX);
                self.set_voltage_v = v;
                Command::Reply {
                    register: Register::Voltage,
                    value: to_milli(v),
                }
            }
            Ok(Command::Read(register)) => Command::Reply {
                register,
                value: match register {
                    Register::Voltage => to_milli(self.actual_voltage_v),
                    Register::Current => to_milli(self.load_current_a),
                },
            },
            Ok(Command::Reply { .. }) | Ok(Command::Nack(_)) => {
                Command::Nack(NackCode::UnexpectedCommand as u8)
            }
            Err(e) => Command::Nack(e.nack_code()),
        };
        encode(&reply)
    }

    /// Move the output toward the set point by at most `slew·dt`.
    pub fn advance(&mut self, dt_s: f64) {
        if !(dt_s > 0.0) {
            return;
        }
        let max_step = self.slew_v_per_s * dt_s;
        let err = self.set_voltage_v - self.actual_voltage_v;
        self.actual_voltage_v = if err.abs() <= max_step {
            self.set_voltage_v
        } else {
            self.actual_voltage_v + max_step.copysign(err)
        };
    }
}

/// Process `incoming` frames, then slew for `dt_s`.
pub fn psu_step<B: AsRef<[u8]>>(state: &PsuState, dt_s: f64, incoming: &[B]) -> (PsuState, Vec<Frame>) {
    let mut next = *state;
    let out = incoming.iter().map(|b| next.handle(b.as_ref())).collect();
    next.advance(dt_s);
    (next, out)
}

/// A request/response path to a supply plus its notion of elapsed time.
pub trait SupplyLink {
    fn transact(&mut self, frame: &Frame) -> Result<Frame, PsuError>;
    /// Let `dt_s` seconds of supply time pass. Real-time links ignore this.
    fn advance(&mut self, dt_s: f64) -> Result<(), PsuError>;
}

pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Frame>> {
    let mut buf = [0u8; FRAME_LEN];
    let mut got = 0;
    while got < FRAME_LEN {
        match r.read(&mut buf[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Some(buf))
}

/// Frames over any reliable ordered byte stream.
pub struct StreamLink<S> {
    stream: S,
}

impl<S: Read + Write> StreamLink<S> {
    pub fn new(stream: S) -> Self {
        Self { stream }
    }
}

impl StreamLink<TcpStream> {
    pub fn connect(addr: &str) -> Result<Self, PsuError> {
        let s = TcpStream::connect(addr)?;
        s.set_nodelay(true)?;
        Ok(Self::new(s))
    }
}

impl<S: Read + Write> SupplyLink for StreamLink<S> {
    fn transact(&mut self, frame: &Frame) -> Result<Frame, PsuError> {
        self.stream.write_all(frame)?;
        self.stream.flush()?;
        read_frame(&mut self.stream)?
            .ok_or_else(|| PsuError::Io("connection closed before reply".into()))
    }

    fn advance(&mut self, _dt_s: f64) -> Result<(), PsuError> {
        Ok(())
    }
}

enum LinkMsg {
    Tick(f64),
    Frame(Frame),
}

/// Simulated supply on its own thread, reached through channels.
/// Time only moves when the host calls [`SupplyLink::advance`], so runs are
/// reproducible.
pub struct InProcLink {
    tx: Option<mpsc::Sender<LinkMsg>>,
    rx: mpsc::Receiver<Frame>,
    handle: Option<thread::JoinHandle<PsuState>>,
}

impl InProcLink {
    pub fn spawn(state: PsuState) -> Self {
        let (tx, inbox) = mpsc::channel::<LinkMsg>();
        let (outbox, rx) = mpsc::channel::<Frame>();
        let handle = thread::spawn(move || {
            let mut st = state;
            for msg in inbox {
                match msg {
                    LinkMsg::Tick(dt) => st.advance(dt),
                    LinkMsg::Frame(f) => {
                        if outbox.send(st.handle(&f)).is_err() {
                            break;
                        }
                    }
                }
            }
            st
        });
        Self {
            tx: Some(tx),
            rx,
            handle: Some(handle),
        }
    }

    /// Stop the supply thread and return its final state.
    pub fn shutdown(mut self) -> PsuState {
        self.tx.take();
        self.handle
            .take()
            .expect("handle present until shutdown")
            .join()
            .expect("supply thread panicked")
    }

    fn send(&self, msg: LinkMsg) -> Result<(), PsuError> {
        self.tx
            .as_ref()
            .expect("sender present until shutdown")
            .send(msg)
            .map_err(|_| PsuError::Io("supply thread stopped".into()))
    }
}

impl SupplyLink for InProcLink {
    fn transact(&mut self, frame: &Frame) -> Result<Frame, PsuError> {
        self.send(LinkMsg::Frame(*frame))?;
        self.rx
            .recv()
            .map_err(|_| PsuError::Io("supply thread stopped".into()))
    }

    fn advance(&mut self, dt_s: f64) -> Result<(), PsuError> {
        self.send(LinkMsg::Tick(dt_s))
    }
}

impl Drop for InProcLink {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Typed client over a [`SupplyLink`].
pub struct PsuClient<L> {
    link: L,
}

impl<L: SupplyLink> PsuClient<L> {
    pub fn new(link: L) -> Self {
        Self { link }
    }

    pub fn link_mut(&mut self) -> &mut L {
        &mut self.link
    }

    pub fn into_link(self) -> L {
        self.link
    }

    fn request(&mut self, cmd: Command) -> Result<(Register, f64), PsuError> {
        match decode(&self.link.transact(&encode(&cmd))?)? {
            Command::Reply { register, value } => Ok((register, f64::from(value) / 1000.0)),
            Command::Nack(code) => Err(PsuError::Nack(code)),
            other => Err(PsuError::UnexpectedReply(other)),
        }
    }

    /// Returns the voltage the supply accepted (after clamping).
    pub fn set_voltage(&mut self, volts: f64) -> Result<f64, PsuError> {
        Ok(self.request(Command::set_volts(volts))?.1)
    }

    pub fn read(&mut self, register: Register) -> Result<f64, PsuError> {
        Ok(self.request(Command::Read(register))?.1)
    }
}

/// Serve the protocol on `listener`, one connection at a time, until `stop`
/// is set. The supply slews in real time, polled every `poll`.
pub fn serve(
    listener: TcpListener,
    mut state: PsuState,
    poll: Duration,
    stop: Arc<AtomicBool>,
) -> io::Result<PsuState> {
    listener.set_nonblocking(true)?;
    let mut last = Instant::now();
    let mut tick = |st: &mut PsuState| {
        let now = Instant::now();
        st.advance((now - last).as_secs_f64());
        last = now;
    };
    while !stop.load(Ordering::Relaxed) {
        let stream = match listener.accept() {
            Ok((s, _)) => s,
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(poll);
                tick(&mut state);
                continue;
            }
            Err(e) => return Err(e),
        };
        stream.set_nonblocking(false)?;
        stream.set_read_timeout(Some(poll))?;
        stream.set_nodelay(true)?;
        let mut stream = stream;
        loop {
            if stop.load(Ordering::Relaxed) {
                break;
            }
            let mut buf = [0u8; FRAME_LEN];
            let mut got = 0;
            let mut closed = false;
            while got < FRAME_LEN {
                match stream.read(&mut buf[got..]) {
                    Ok(0) => {
                        closed = true;
                        break;
                    }
                    Ok(n) => got += n,
                    Err(e)
                        if matches!(
                            e.kind(),
                            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                        ) =>
                    {
                        tick(&mut state);
                        if stop.load(Ordering::Relaxed) {
                            closed = true;
                            break;
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                    Err(_) => {
                        closed = true;
                        break;
                    }
                }
            }
            if closed {
                break;
            }
            tick(&mut state);
            let reply = state.handle(&buf);
            if stream.write_all(&reply).is_err() {
                break;
            }
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_voltage_48_payload() {
        let f = encode(&Command::set_volts(48.0));
        assert_eq!(f.len(), 13);
        assert_eq!(&f[..4], &[0x10, 0x01, 0x80, 0x00]);
        assert_eq!(f[4], 8);
        assert_eq!(f[5], 0x01);
        assert_eq!(&f[9..13], &[0x00, 0x00, 0xBB, 0x80]);
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode(&[0u8; 12]), Err(ProtocolError::BadLength(12)));
        let mut f = encode(&Command::Read(Register::Voltage));
        f[4] = 7;
        assert_eq!(decode(&f), Err(ProtocolError::BadDlc(7)));
        let mut f = encode(&Command::Read(Register::Voltage));
        f[3] = 0x55;
        assert_eq!(decode(&f), Err(ProtocolError::UnknownId(0x1001_8055)));
        let mut f = encode(&Command::Read(Register::Voltage));
        f[0] = 0xF0;
        assert!(matches!(decode(&f), Err(ProtocolError::UnknownId(_))));
        let mut f = encode(&Command::Read(Register::Voltage));
        f[5] = 0x09;
        assert_eq!(decode(&f), Err(ProtocolError::UnknownRegister(9)));
    }

    #[test]
    fn frame_id_must_fit_29_bits() {
        assert!(CanFrame::new(1 << 29, [0; 8]).is_none());
        assert!(CanFrame::new(EXTENDED_ID_MASK, [0; 8]).is_some());
    }

    #[test]
    fn set_clamps_and_replies() {
        let st = PsuState::new(48.0, 50.0);
        let (st, out) = psu_step(&st, 0.01, &[encode(&Command::set_volts(60.0))]);
        assert_eq!(st.set_voltage_v, 58.0);
        assert_eq!(
            decode(&out[0]).unwrap(),
            Command::Reply {
                register: Register::Voltage,
                value: 58_000
            }
        );
        let (st, out) = psu_step(&st, 0.01, &[encode(&Command::set_volts(25.0))]);
        assert_eq!(st.set_voltage_v, 30.0);
        assert_eq!(
            decode(&out[0]).unwrap(),
            Command::Reply {
                register: Register::Voltage,
                value: 30_000
            }
        );
    }

    #[test]
    fn slew_arithmetic() {
        let st = PsuState::new(48.0, 50.0);
        let (st, _) = psu_step(&st, 0.1, &[encode(&Command::set_volts(58.0))]);
        assert!((st.actual_voltage_v - 53.0).abs() < 1e-12);
        let (st, _) = psu_step::<Frame>(&st, 0.1, &[]);
        assert_eq!(st.actual_voltage_v, 58.0);
    }

    #[test]
    fn read_current_under_load() {
        let mut st = PsuState::new(50.0, 50.0);
        st.load_current_a = 27.0456;
        let (_, out) = psu_step(&st, 0.01, &[encode(&Command::Read(Register::Current))]);
        assert_eq!(
            decode(&out[0]).unwrap(),
            Command::Reply {
                register: Register::Current,
                value: 27_046
            }
        );
    }

    #[test]
    fn unexpected_and_malformed_frames_nack() {
        let st = PsuState::new(50.0, 50.0);
        let reply = encode(&Command::Reply {
            register: Register::Voltage,
            value: 1,
        });
        let mut bad = encode(&Command::set_volts(40.0));
        bad[4] = 0;
        let (next, out) = psu_step(&st, 0.01, &[reply.to_vec(), bad.to_vec(), vec![1, 2, 3]]);
        assert_eq!(next, st);
        assert_eq!(decode(&out[0]).unwrap(), Command::Nack(0x04));
        assert_eq!(decode(&out[1]).unwrap(), Command::Nack(0x01));
        assert_eq!(decode(&out[2]).unwrap(), Command::Nack(0x01));
    }

    #[test]
    fn inproc_client_round_trip() {
        let mut c = PsuClient::new(InProcLink::spawn(PsuState::new(48.0, 50.0)));
        assert_eq!(c.set_voltage(58.0).unwrap(), 58.0);
        c.link_mut().advance(0.1).unwrap();
        assert_eq!(c.read(Register::Voltage).unwrap(), 53.0);
        c.link_mut().advance(1.0).unwrap();
        assert_eq!(c.read(Register::Voltage).unwrap(), 58.0);
        let st = c.into_link().shutdown();
        assert_eq!(st.actual_voltage_v, 58.0);
    }

    #[test]
    fn stream_link_over_in_memory_pipe() {
        // A cursor that holds a pre-computed reply stands in for the socket.
        struct Loop {
            st: PsuState,
            pending: Vec<u8>,
        }
        impl Read for Loop {
            fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
                let n = buf.len().min(self.pending.len());
                buf[..n].copy_from_slice(&self.pending[..n]);
                self.pending.drain(..n);
                Ok(n)
            }
        }
        impl Write for Loop {
            fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
                let r = self.st.handle(buf);
                self.pending.extend_from_slice(&r);
                Ok(buf.len())
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let mut c = PsuClient::new(StreamLink::new(Loop {
            st: PsuState::new(40.0, 50.0),
            pending: vec![],
        }));
        assert_eq!(c.set_voltage(45.5).unwrap(), 45.5);
        assert_eq!(c.read(Register::Voltage).unwrap(), 40.0);
    }
}
