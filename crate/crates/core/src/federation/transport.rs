//! Line transports: TCP streams and in-memory channels carrying the same
//! newline-terminated frames.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::mpsc::{Receiver, Sender};

use super::server::ConnId;
use crate::error::{Error, Result};

pub enum ReadLine {
    Line(String),
    TooLong,
    Eof,
}

/// Reads one line without buffering more than `max` bytes of it. A final
/// line without a newline is still returned.
pub fn read_line_limited<R: BufRead>(r: &mut R, max: usize) -> io::Result<ReadLine> {
    let mut buf = Vec::new();
    loop {
        let avail = match r.fill_buf() {
            Ok(a) => a,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        if avail.is_empty() {
            return Ok(if buf.is_empty() {
                ReadLine::Eof
            } else {
                ReadLine::Line(String::from_utf8_lossy(&buf).into_owned())
            });
        }
        if let Some(pos) = avail.iter().position(|&b| b == b'\n') {
            buf.extend_from_slice(&avail[..pos]);
            r.consume(pos + 1);
            if buf.len() > max {
                return Ok(ReadLine::TooLong);
            }
            if buf.last() == Some(&b'\r') {
                buf.pop();
            }
            return Ok(ReadLine::Line(String::from_utf8_lossy(&buf).into_owned()));
        }
        let n = avail.len();
        buf.extend_from_slice(avail);
        r.consume(n);
        if buf.len() > max {
            return Ok(ReadLine::TooLong);
        }
    }
}

/// Client side of a connection.
pub trait Transport {
    fn send(&mut self, line: &str) -> Result<()>;
    /// Next line, or `None` once the server has closed the connection.
    fn recv(&mut self) -> Result<Option<String>>;
}

pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|source| Error::Connect {
            addr: addr.to_string(),
            source,
        })?;
        Self::new(stream)
    }

    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(TcpTransport {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, line: &str) -> Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<String>> {
        match read_line_limited(&mut self.reader, super::MAX_FRAME_BYTES)? {
            ReadLine::Line(l) => Ok(Some(l)),
            ReadLine::TooLong => Err(Error::Protocol(
                "server frame exceeds the size limit".into(),
            )),
            ReadLine::Eof => Ok(None),
        }
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        let _ = self.writer.shutdown(Shutdown::Both);
    }
}

/// Everything the server loop reacts to.
pub enum Event {
    Connected(ConnId, Box<dyn LineSink>),
    Line(ConnId, String),
    TooLong(ConnId),
    Closed(ConnId),
}

/// Server side of a connection.
pub trait LineSink: Send {
    fn send_line(&mut self, line: &str) -> io::Result<()>;
    fn close(&mut self);
}

pub struct TcpSink(pub TcpStream);

impl LineSink for TcpSink {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        self.0.write_all(line.as_bytes())?;
        self.0.write_all(b"\n")?;
        self.0.flush()
    }

    fn close(&mut self) {
        let _ = self.0.shutdown(Shutdown::Both);
    }
}

/// Forwards a TCP connection's lines into the server's event queue.
pub fn pump_tcp(conn: ConnId, stream: TcpStream, events: Sender<Event>) {
    let mut reader = BufReader::new(stream);
    loop {
        let ev = match read_line_limited(&mut reader, super::MAX_FRAME_BYTES) {
            Ok(ReadLine::Line(l)) => Event::Line(conn, l),
            Ok(ReadLine::TooLong) => {
                let _ = events.send(Event::TooLong(conn));
                break;
            }
            Ok(ReadLine::Eof) | Err(_) => break,
        };
        if events.send(ev).is_err() {
            return;
        }
    }
    let _ = events.send(Event::Closed(conn));
}

pub struct ChannelSink(Option<Sender<String>>);

impl ChannelSink {
    pub fn new(tx: Sender<String>) -> Self {
        ChannelSink(Some(tx))
    }
}

impl LineSink for ChannelSink {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        match &self.0 {
            Some(tx) => tx
                .send(line.to_string())
                .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "client gone")),
            None => Err(io::Error::new(io::ErrorKind::NotConnected, "closed")),
        }
    }

    fn close(&mut self) {
        self.0 = None;
    }
}

/// In-memory client end; dropping it closes the connection.
pub struct ChannelTransport {
    conn: ConnId,
    to_server: Sender<Event>,
    from_server: Receiver<String>,
}

impl ChannelTransport {
    pub fn new(conn: ConnId, to_server: Sender<Event>, from_server: Receiver<String>) -> Self {
        ChannelTransport {
            conn,
            to_server,
            from_server,
        }
    }
}

impl Transport for ChannelTransport {
    fn send(&mut self, line: &str) -> Result<()> {
        self.to_server
            .send(Event::Line(self.conn, line.to_string()))
            .map_err(|_| Error::Protocol("server is gone".into()))
    }

    fn recv(&mut self) -> Result<Option<String>> {
        Ok(self.from_server.recv().ok())
    }
}

impl Drop for ChannelTransport {
    fn drop(&mut self) {
        let _ = self.to_server.send(Event::Closed(self.conn));
    }
}

/// Records every byte a transport sends and receives.
pub struct Capture<T> {
    inner: T,
    pub sent: Vec<u8>,
    pub received: Vec<u8>,
}

impl<T> Capture<T> {
    pub fn new(inner: T) -> Self {
        Capture {
            inner,
            sent: Vec::new(),
            received: Vec::new(),
        }
    }
}

impl<T: Transport> Transport for Capture<T> {
    fn send(&mut self, line: &str) -> Result<()> {
        self.sent.extend_from_slice(line.as_bytes());
        self.sent.push(b'\n');
        self.inner.send(line)
    }

    fn recv(&mut self) -> Result<Option<String>> {
        let line = self.inner.recv()?;
        if let Some(l) = &line {
            self.received.extend_from_slice(l.as_bytes());
            self.received.push(b'\n');
        }
        Ok(line)
    }
}
