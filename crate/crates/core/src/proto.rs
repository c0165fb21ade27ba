//! Minimal protocol-buffers writer: varints, fixed32 floats and
//! length-delimited fields, which is all a GTFS-RT vehicle feed needs.

const WIRE_VARINT: u8 = 0;
const WIRE_LEN: u8 = 2;
const WIRE_FIXED32: u8 = 5;

#[derive(Debug, Default)]
pub struct ProtoWriter {
    buf: Vec<u8>,
}

impl ProtoWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    fn raw_varint(&mut self, mut v: u64) {
        while v >= 0x80 {
            self.buf.push((v as u8) | 0x80);
            v >>= 7;
        }
        self.buf.push(v as u8);
    }

    fn tag(&mut self, field: u32, wire_type: u8) {
        self.raw_varint(((field as u64) << 3) | wire_type as u64);
    }

    pub fn varint(&mut self, field: u32, v: u64) -> &mut Self {
        self.tag(field, WIRE_VARINT);
        self.raw_varint(v);
        self
    }

    pub fn float(&mut self, field: u32, v: f32) -> &mut Self {
        self.tag(field, WIRE_FIXED32);
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn bytes(&mut self, field: u32, data: &[u8]) -> &mut Self {
        self.tag(field, WIRE_LEN);
        self.raw_varint(data.len() as u64);
        self.buf.extend_from_slice(data);
        self
    }

    pub fn string(&mut self, field: u32, s: &str) -> &mut Self {
        self.bytes(field, s.as_bytes())
    }

    /// Writes an embedded message built by `f`.
    pub fn message(&mut self, field: u32, f: impl FnOnce(&mut ProtoWriter)) -> &mut Self {
        let mut inner = ProtoWriter::new();
        f(&mut inner);
        self.bytes(field, &inner.buf)
    }
}
