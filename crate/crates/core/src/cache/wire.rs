//! Minimal binary protocol for reaching L2 nodes over TCP.
//!
//! Request frame: `u32-LE body length | op u8 (0 GET, 1 PUT) | name [32] |
//! stripe u8 | (PUT only) u32-LE length | bytes`.
//! Response: `status u8 | u32-LE length | bytes`.

use std::collections::BTreeMap;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::Mutex;

use super::node::{CacheNode, L2Request, L2Response};
use super::ring::NodeId;
use super::ring::{HashRing, RingError};
use super::L2Client;
use crate::crypto::ChunkHash;

const OP_GET: u8 = 0;
const OP_PUT: u8 = 1;

const ST_HIT: u8 = 0;
const ST_MISS: u8 = 1;
const ST_STORED: u8 = 2;
const ST_UNAVAILABLE: u8 = 3;
const ST_REJECTED: u8 = 4;

/// Upper bound on a frame body; stripes of the largest chunks fit easily.
pub const MAX_FRAME: usize = 64 << 20;

fn bad(msg: &'static str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn encode_request(req: &L2Request) -> Vec<u8> {
    let mut body = Vec::new();
    match req {
        L2Request::Get { name, stripe } => {
            body.push(OP_GET);
            body.extend_from_slice(&name.0);
            body.push(*stripe);
        }
        L2Request::Put { name, stripe, bytes } => {
            body.push(OP_PUT);
            body.extend_from_slice(&name.0);
            body.push(*stripe);
            body.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            body.extend_from_slice(bytes);
        }
    }
    let mut out = (body.len() as u32).to_le_bytes().to_vec();
    out.extend(body);
    out
}

pub fn read_request<R: Read>(r: &mut R) -> io::Result<L2Request> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if !(34..=MAX_FRAME).contains(&len) {
        return Err(bad("request frame length out of range"));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let name = ChunkHash(body[1..33].try_into().unwrap());
    let stripe = body[33];
    match body[0] {
        OP_GET if len == 34 => Ok(L2Request::Get { name, stripe }),
        OP_PUT if len >= 38 => {
            let n = u32::from_le_bytes(body[34..38].try_into().unwrap()) as usize;
            if 38 + n != len {
                return Err(bad("PUT payload length mismatch"));
            }
            Ok(L2Request::Put { name, stripe, bytes: Arc::from(&body[38..]) })
        }
        _ => Err(bad("unknown op or bad frame length")),
    }
}

pub fn encode_response(resp: &L2Response) -> Vec<u8> {
    let (status, bytes): (u8, &[u8]) = match resp {
        L2Response::Hit(b) => (ST_HIT, b),
        L2Response::Miss => (ST_MISS, &[]),
        L2Response::Stored => (ST_STORED, &[]),
        L2Response::Unavailable => (ST_UNAVAILABLE, &[]),
        L2Response::Rejected => (ST_REJECTED, &[]),
    };
    let mut out = Vec::with_capacity(5 + bytes.len());
    out.push(status);
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
    out
}

pub fn read_response<R: Read>(r: &mut R) -> io::Result<L2Response> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head)?;
    let len = u32::from_le_bytes(head[1..5].try_into().unwrap()) as usize;
    if len > MAX_FRAME {
        return Err(bad("response too large"));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let resp = match head[0] {
        ST_HIT => return Ok(L2Response::Hit(Arc::from(body))),
        ST_MISS => L2Response::Miss,
        ST_STORED => L2Response::Stored,
        ST_UNAVAILABLE => L2Response::Unavailable,
        ST_REJECTED => L2Response::Rejected,
        _ => return Err(bad("unknown status")),
    };
    if len != 0 {
        return Err(bad("unexpected response payload"));
    }
    Ok(resp)
}

/// Serves one cache node on a TCP listener, one thread per connection.
pub struct NodeServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl NodeServer {
    pub fn spawn(node: Arc<Mutex<CacheNode>>, bind: &str) -> io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop2 = stop.clone();
        let accept = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let node = node.clone();
                std::thread::spawn(move || {
                    let _ = serve_conn(conn, &node);
                });
            }
        });
        Ok(NodeServer { addr, stop, accept: Some(accept) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for NodeServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop so it observes the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve_conn(conn: TcpStream, node: &Mutex<CacheNode>) -> io::Result<()> {
    conn.set_nodelay(true)?;
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut writer = BufWriter::new(conn);
    loop {
        let req = match read_request(&mut reader) {
            Ok(r) => r,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        };
        let resp = node.lock().handle(&req);
        writer.write_all(&encode_response(&resp))?;
        writer.flush()?;
    }
}

/// Client side: one lazily opened connection per node.
pub struct TcpTransport {
    addrs: BTreeMap<NodeId, SocketAddr>,
    conns: Mutex<BTreeMap<NodeId, TcpStream>>,
}

impl TcpTransport {
    pub fn new(addrs: BTreeMap<NodeId, SocketAddr>) -> Self {
        TcpTransport { addrs, conns: Mutex::new(BTreeMap::new()) }
    }

    fn roundtrip(&self, node: NodeId, req: &L2Request) -> io::Result<L2Response> {
        let addr = *self.addrs.get(&node).ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "unknown node"))?;
        let mut conns = self.conns.lock();
        if !conns.contains_key(&node) {
            let s = TcpStream::connect(addr)?;
            s.set_nodelay(true)?;
            conns.insert(node, s);
        }
        let stream = conns.get_mut(&node).unwrap();
        let result = stream.write_all(&encode_request(req)).and_then(|_| read_response(stream));
        if result.is_err() {
            conns.remove(&node);
        }
        result
    }
}

/// L2 reached over sockets; every configured node is assumed up.
pub struct RemoteL2 {
    pub ring: HashRing,
    pub transport: TcpTransport,
}

impl L2Client for RemoteL2 {
    fn place(&self, name: &ChunkHash, count: usize) -> Result<Vec<NodeId>, RingError> {
        self.ring.place_stripes(name, count, |n| self.transport.addrs.contains_key(&n))
    }

    fn send(&self, node: NodeId, req: &L2Request) -> L2Response {
        self.transport.roundtrip(node, req).unwrap_or(L2Response::Unavailable)
    }
}
