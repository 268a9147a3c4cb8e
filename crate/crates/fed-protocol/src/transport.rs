//! Ordered, reliable byte-stream transports with u32 length-prefixed frames.
//! The in-process pipe is the reference; a loopback TCP pair satisfies the
//! same contract without protocol changes.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Condvar, Mutex};

use crate::error::{FedError, Result};

/// Frames larger than this are treated as corruption, not allocation hints.
const MAX_FRAME_LEN: u32 = 16 * 1024 * 1024;

pub trait Stream: Read + Write + Send {}
impl<T: Read + Write + Send> Stream for T {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProc,
    Loopback,
}

impl std::str::FromStr for TransportKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inproc" => Ok(Self::InProc),
            "loopback" => Ok(Self::Loopback),
            other => Err(format!("unknown transport '{other}'")),
        }
    }
}

#[derive(Default)]
struct PipeState {
    data: VecDeque<u8>,
    closed: bool,
}

/// One direction of an in-process byte pipe.
#[derive(Default)]
struct PipeBuf {
    state: Mutex<PipeState>,
    readable: Condvar,
}

/// Duplex in-process stream endpoint; reads block until data or peer close.
pub struct InProcEnd {
    rx: Arc<PipeBuf>,
    tx: Arc<PipeBuf>,
}

impl Read for InProcEnd {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        let mut st = self.rx.state.lock().unwrap();
        while st.data.is_empty() && !st.closed {
            st = self.rx.readable.wait(st).unwrap();
        }
        if st.data.is_empty() {
            return Ok(0);
        }
        let n = buf.len().min(st.data.len());
        for b in buf.iter_mut().take(n) {
            *b = st.data.pop_front().unwrap();
        }
        Ok(n)
    }
}

impl Write for InProcEnd {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let mut st = self.tx.state.lock().unwrap();
        if st.closed {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "peer closed"));
        }
        st.data.extend(buf);
        self.tx.readable.notify_all();
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Drop for InProcEnd {
    fn drop(&mut self) {
        // wake blocked readers on the outgoing direction
        let mut st = self.tx.state.lock().unwrap();
        st.closed = true;
        self.tx.readable.notify_all();
    }
}

fn inproc_pair() -> (InProcEnd, InProcEnd) {
    let a = Arc::new(PipeBuf::default());
    let b = Arc::new(PipeBuf::default());
    (
        InProcEnd {
            rx: a.clone(),
            tx: b.clone(),
        },
        InProcEnd { rx: b, tx: a },
    )
}

fn loopback_pair() -> Result<(TcpStream, TcpStream)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let client = TcpStream::connect(addr)?;
    let (server, _) = listener.accept()?;
    server.set_nodelay(true)?;
    client.set_nodelay(true)?;
    Ok((client, server))
}

/// A connected (client end, server end) stream pair.
pub fn stream_pair(kind: TransportKind) -> Result<(Box<dyn Stream>, Box<dyn Stream>)> {
    match kind {
        TransportKind::InProc => {
            let (c, s) = inproc_pair();
            Ok((Box::new(c), Box::new(s)))
        }
        TransportKind::Loopback => {
            let (c, s) = loopback_pair()?;
            Ok((Box::new(c), Box::new(s)))
        }
    }
}

/// Write one frame: u32 little-endian payload length, then the payload.
pub fn write_frame<W: Write + ?Sized>(w: &mut W, payload: &[u8]) -> Result<()> {
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

/// Read one length-prefixed frame; a clean close mid-frame is incomplete.
pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(eof_as_incomplete)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_FRAME_LEN {
        return Err(FedError::Corrupt(format!(
            "frame length {len} exceeds the {MAX_FRAME_LEN}-byte cap"
        )));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(eof_as_incomplete)?;
    Ok(payload)
}

fn eof_as_incomplete(e: io::Error) -> FedError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        FedError::Incomplete("stream closed mid-frame".into())
    } else {
        FedError::Io(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(kind: TransportKind) {
        let (mut client, mut server) = stream_pair(kind).unwrap();
        let payloads: Vec<Vec<u8>> = vec![vec![1, 2, 3], vec![], vec![0xAB; 1000]];
        let sent = payloads.clone();
        let writer = std::thread::spawn(move || {
            for p in &sent {
                write_frame(&mut *client, p).unwrap();
            }
        });
        for p in &payloads {
            assert_eq!(&read_frame(&mut *server).unwrap(), p);
        }
        writer.join().unwrap();
    }

    #[test]
    fn inproc_frames_round_trip_in_order() {
        roundtrip(TransportKind::InProc);
    }

    #[test]
    fn loopback_frames_round_trip_in_order() {
        roundtrip(TransportKind::Loopback);
    }

    #[test]
    fn both_directions_work() {
        let (mut client, mut server) = stream_pair(TransportKind::InProc).unwrap();
        write_frame(&mut *server, b"down").unwrap();
        assert_eq!(read_frame(&mut *client).unwrap(), b"down");
        write_frame(&mut *client, b"up").unwrap();
        assert_eq!(read_frame(&mut *server).unwrap(), b"up");
    }

    #[test]
    fn close_mid_frame_is_incomplete() {
        let (mut client, mut server) = stream_pair(TransportKind::InProc).unwrap();
        client.write_all(&100u32.to_le_bytes()).unwrap();
        client.write_all(&[1, 2, 3]).unwrap();
        drop(client);
        assert!(matches!(
            read_frame(&mut *server).unwrap_err(),
            FedError::Incomplete(_)
        ));
    }

    #[test]
    fn oversized_length_prefix_is_corrupt() {
        let (mut client, mut server) = stream_pair(TransportKind::InProc).unwrap();
        client.write_all(&u32::MAX.to_le_bytes()).unwrap();
        assert!(matches!(
            read_frame(&mut *server).unwrap_err(),
            FedError::Corrupt(_)
        ));
    }
}
