//! Key pool fed by the QKD pipeline and AES-128-GCM framing of timing data.
//!
//! Wire format of one frame, little-endian throughout:
//!
//! ```text
//! "QSTT" | 0x01 | frame_id u64 | key_id u64 | nonce [12] | payload_len u32 | ciphertext | tag [16]
//! ```
//!
//! The header is the associated data. Each frame consumes one fresh 128-bit key.

use std::collections::HashSet;
use std::ops::Range;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes128Gcm, Key, Nonce};
use rand::Rng;
use serde::Serialize;

pub const MAGIC: &[u8; 4] = b"QSTT";
pub const VERSION: u8 = 0x01;
pub const KEY_BITS: u64 = 128;
pub const MAX_PAYLOAD: usize = 32 * 1024;
pub const HEADER_LEN: usize = 4 + 1 + 8 + 8 + 12 + 4;
pub const TAG_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyError {
    #[error("key pool exhausted: {available} bits available, {consumed} consumed")]
    Exhausted { available: u64, consumed: u64 },
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte frame cap")]
    TooLarge(usize),
    #[error("frame id {0} is not above the previous id")]
    FrameOrder(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, thiserror::Error)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    #[error("authentication tag mismatch")]
    BadTag,
    #[error("frame id or key already used")]
    Replay,
    #[error("key id not in the pool")]
    UnknownKey,
    #[error("malformed frame")]
    Malformed,
}

/// Shared secret bit material, consumed in 128-bit segments.
#[derive(Clone, Debug, Default)]
pub struct KeyPool {
    bytes: Vec<u8>,
    available_bits: u64,
    consumed_bits: u64,
    consumed: Vec<Range<u64>>,
}

impl KeyPool {
    pub fn new() -> Self {
        KeyPool::default()
    }

    /// Pool filled with `bits` of material from a seeded generator, standing
    /// in for keys from earlier passes.
    pub fn preseeded<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> Self {
        let mut pool = KeyPool::new();
        let mut bytes = vec![0u8; bits.div_ceil(8) as usize];
        rng.fill(bytes.as_mut_slice());
        pool.deposit_packed(&bytes, bits);
        pool
    }

    /// Appends bits given one per element (only the low bit is used).
    pub fn deposit(&mut self, bits: impl IntoIterator<Item = u8>) {
        for b in bits {
            let i = self.available_bits;
            if i.is_multiple_of(8) {
                self.bytes.push(0);
            }
            self.bytes[(i / 8) as usize] |= (b & 1) << (i % 8);
            self.available_bits += 1;
        }
    }

    /// Appends the first `bits` bits of `packed` (LSB first).
    pub fn deposit_packed(&mut self, packed: &[u8], bits: u64) {
        assert!(bits <= packed.len() as u64 * 8);
        if self.available_bits.is_multiple_of(8) {
            self.bytes.truncate((self.available_bits / 8) as usize);
            self.bytes.extend_from_slice(&packed[..bits.div_ceil(8) as usize]);
            let extra = self.bytes.len() as u64 * 8 - (self.available_bits + bits);
            if extra > 0 {
                let last = self.bytes.len() - 1;
                self.bytes[last] &= 0xff >> extra;
            }
            self.available_bits += bits;
        } else {
            self.deposit((0..bits).map(|i| (packed[(i / 8) as usize] >> (i % 8)) & 1));
        }
    }

    pub fn available_bits(&self) -> u64 {
        self.available_bits
    }

    pub fn consumed_bits(&self) -> u64 {
        self.consumed_bits
    }

    pub fn remaining_keys(&self) -> u64 {
        (self.available_bits - self.consumed_bits) / KEY_BITS
    }

    pub fn consumed_ranges(&self) -> &[Range<u64>] {
        &self.consumed
    }

    /// Key segment `key_id` without consuming it.
    pub fn key(&self, key_id: u64) -> Option<[u8; 16]> {
        let end = key_id.checked_add(1)?.checked_mul(KEY_BITS)?;
        if end > self.available_bits {
            return None;
        }
        let mut k = [0u8; 16];
        let start = key_id * KEY_BITS;
        for (i, byte) in k.iter_mut().enumerate() {
            for j in 0..8 {
                let bit = start + (i * 8 + j) as u64;
                *byte |= ((self.bytes[(bit / 8) as usize] >> (bit % 8)) & 1) << j;
            }
        }
        Some(k)
    }

    /// Takes the next unused key.
    pub fn take_key(&mut self) -> Result<(u64, [u8; 16]), KeyError> {
        if self.available_bits - self.consumed_bits < KEY_BITS {
            return Err(KeyError::Exhausted { available: self.available_bits, consumed: self.consumed_bits });
        }
        let id = self.consumed_bits / KEY_BITS;
        let key = self.key(id).expect("checked availability");
        self.consumed.push(self.consumed_bits..self.consumed_bits + KEY_BITS);
        self.consumed_bits += KEY_BITS;
        Ok((id, key))
    }
}

fn nonce_for(frame_id: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[..8].copy_from_slice(&frame_id.to_le_bytes());
    n
}

fn header(frame_id: u64, key_id: u64, len: u32) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(MAGIC);
    h[4] = VERSION;
    h[5..13].copy_from_slice(&frame_id.to_le_bytes());
    h[13..21].copy_from_slice(&key_id.to_le_bytes());
    h[21..33].copy_from_slice(&nonce_for(frame_id));
    h[33..37].copy_from_slice(&len.to_le_bytes());
    h
}

/// Sending side: consumes keys and enforces increasing frame ids.
#[derive(Debug, Default)]
pub struct FrameSender {
    last_id: Option<u64>,
}

impl FrameSender {
    pub fn new() -> Self {
        FrameSender::default()
    }

    pub fn encrypt_frame(&mut self, pool: &mut KeyPool, plaintext: &[u8], frame_id: u64) -> Result<Vec<u8>, KeyError> {
        if plaintext.len() > MAX_PAYLOAD {
            return Err(KeyError::TooLarge(plaintext.len()));
        }
        if self.last_id.is_some_and(|l| frame_id <= l) {
            return Err(KeyError::FrameOrder(frame_id));
        }
        let (key_id, key) = pool.take_key()?;
        let h = header(frame_id, key_id, plaintext.len() as u32);
        let cipher = Aes128Gcm::new(Key::<Aes128Gcm>::from_slice(&key));
        let nonce = nonce_for(frame_id);
        let ct = cipher
            .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad: &h })
            .expect("in-memory AES-GCM cannot fail");
        self.last_id = Some(frame_id);
        let mut out = Vec::with_capacity(HEADER_LEN + ct.len());
        out.extend_from_slice(&h);
        out.extend_from_slice(&ct);
        Ok(out)
    }

    /// Splits `data` into capped chunks and encrypts each, ids from `first_id`.
    pub fn encrypt_stream(&mut self, pool: &mut KeyPool, data: &[u8], first_id: u64) -> Result<Vec<Vec<u8>>, KeyError> {
        let mut frames = Vec::new();
        if data.is_empty() {
            frames.push(self.encrypt_frame(pool, &[], first_id)?);
        }
        for (i, chunk) in data.chunks(MAX_PAYLOAD).enumerate() {
            frames.push(self.encrypt_frame(pool, chunk, first_id + i as u64)?);
        }
        Ok(frames)
    }
}

/// Receiving side holding the same key material.
#[derive(Debug)]
pub struct FrameReceiver<'a> {
    pool: &'a KeyPool,
    last_id: Option<u64>,
    used_keys: HashSet<u64>,
}

impl<'a> FrameReceiver<'a> {
    pub fn new(pool: &'a KeyPool) -> Self {
        FrameReceiver { pool, last_id: None, used_keys: HashSet::new() }
    }

    pub fn decrypt_verify(&mut self, frame: &[u8]) -> Result<Vec<u8>, Rejection> {
        if frame.len() < HEADER_LEN + TAG_LEN || &frame[..4] != MAGIC || frame[4] != VERSION {
            return Err(Rejection::Malformed);
        }
        let u64_at = |i: usize| u64::from_le_bytes(frame[i..i + 8].try_into().expect("8 bytes"));
        let frame_id = u64_at(5);
        let key_id = u64_at(13);
        let len = u32::from_le_bytes(frame[33..37].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD || frame.len() != HEADER_LEN + len + TAG_LEN {
            return Err(Rejection::Malformed);
        }
        let key = self.pool.key(key_id).ok_or(Rejection::UnknownKey)?;
        let cipher = Aes128Gcm::new(Key::<Aes128Gcm>::from_slice(&key));
        let plain = cipher
            .decrypt(Nonce::from_slice(&frame[21..33]), Payload { msg: &frame[HEADER_LEN..], aad: &frame[..HEADER_LEN] })
            .map_err(|_| Rejection::BadTag)?;
        if self.last_id.is_some_and(|l| frame_id <= l) || self.used_keys.contains(&key_id) {
            return Err(Rejection::Replay);
        }
        self.last_id = Some(frame_id);
        self.used_keys.insert(key_id);
        Ok(plain)
    }
}

/// Frame id of a well-formed header.
pub fn frame_id(frame: &[u8]) -> Option<u64> {
    (frame.len() >= HEADER_LEN && &frame[..4] == MAGIC).then(|| u64::from_le_bytes(frame[5..13].try_into().expect("8 bytes")))
}

/// Splits a concatenated frame file. A trailing fragment is returned as a
/// final (malformed) frame so that it is counted and rejected.
pub fn split_frames(data: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < data.len() {
        let rest = &data[i..];
        if rest.len() < HEADER_LEN + TAG_LEN {
            out.push(rest.to_vec());
            break;
        }
        let len = u32::from_le_bytes(rest[33..37].try_into().expect("4 bytes")) as usize;
        let n = (HEADER_LEN + len + TAG_LEN).min(rest.len());
        out.push(rest[..n].to_vec());
        i += n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn deposits() {
        let mut p = KeyPool::new();
        p.deposit(std::iter::empty());
        assert_eq!(p.available_bits(), 0);
        p.deposit([1, 0, 1]);
        p.deposit_packed(&[0xff, 0x01], 9);
        assert_eq!(p.available_bits(), 12);
        p.deposit([1; 116]);
        assert_eq!(p.remaining_keys(), 1);
        let k = p.key(0).unwrap();
        // bits: 1,0,1, then nine ones, then ones.
        assert_eq!(k[0], 0b1111_1101);
        assert!(k[1..].iter().all(|&b| b == 0xff));
    }

    #[test]
    fn paper_pool_budget() {
        let mut pool = KeyPool::preseeded(4_069_481, &mut seeded(1));
        assert_eq!(pool.remaining_keys(), 31_792);
        let mut tx = FrameSender::new();
        let block = vec![0xabu8; MAX_PAYLOAD];
        let mut n = 0u64;
        while tx.encrypt_frame(&mut pool, &block, n).is_ok() {
            n += 1;
        }
        assert_eq!(n, 31_792);
        assert!(matches!(tx.encrypt_frame(&mut pool, &block, n), Err(KeyError::Exhausted { .. })));
        let r = pool.consumed_ranges();
        assert!(r.windows(2).all(|w| w[0].end <= w[1].start));
        assert_eq!(pool.consumed_bits(), 31_792 * 128);
    }

    #[test]
    fn roundtrip_and_empty() {
        let mut pool = KeyPool::preseeded(1024, &mut seeded(2));
        let rx_pool = pool.clone();
        let mut tx = FrameSender::new();
        let f0 = tx.encrypt_frame(&mut pool, b"two-way events", 0).unwrap();
        let f1 = tx.encrypt_frame(&mut pool, b"", 1).unwrap();
        assert_eq!(f1.len(), HEADER_LEN + TAG_LEN);
        assert_eq!(pool.consumed_bits(), 256);
        let mut rx = FrameReceiver::new(&rx_pool);
        assert_eq!(rx.decrypt_verify(&f0).unwrap(), b"two-way events");
        assert_eq!(rx.decrypt_verify(&f1).unwrap(), b"");
    }

    #[test]
    fn header_layout() {
        let mut pool = KeyPool::preseeded(256, &mut seeded(3));
        let f = FrameSender::new().encrypt_frame(&mut pool, &[1, 2, 3], 0x0102).unwrap();
        assert_eq!(&f[..4], b"QSTT");
        assert_eq!(f[4], 1);
        assert_eq!(&f[5..13], &0x0102u64.to_le_bytes());
        assert_eq!(&f[13..21], &0u64.to_le_bytes());
        assert_eq!(&f[21..33], &[2, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&f[33..37], &3u32.to_le_bytes());
        assert_eq!(f.len(), HEADER_LEN + 3 + TAG_LEN);
    }

    #[test]
    fn oversize_rejected() {
        let mut pool = KeyPool::preseeded(256, &mut seeded(4));
        assert!(matches!(FrameSender::new().encrypt_frame(&mut pool, &vec![0; MAX_PAYLOAD + 1], 0), Err(KeyError::TooLarge(_))));
        assert_eq!(pool.consumed_bits(), 0);
    }

    #[test]
    fn single_bit_tampers_all_rejected() {
        let mut rng = seeded(5);
        let mut pool = KeyPool::preseeded(128 * 64, &mut rng);
        let rx_pool = pool.clone();
        let mut tx = FrameSender::new();
        let frames: Vec<Vec<u8>> = (0..64)
            .map(|i| {
                let len = rng.random_range(0..600);
                let msg: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                tx.encrypt_frame(&mut pool, &msg, i).unwrap()
            })
            .collect();
        let mut rejected = 0;
        for _ in 0..10_000 {
            let f = &frames[rng.random_range(0..frames.len())];
            let mut bad = f.clone();
            let bit = rng.random_range(0..bad.len() * 8);
            bad[bit / 8] ^= 1 << (bit % 8);
            let mut rx = FrameReceiver::new(&rx_pool);
            if rx.decrypt_verify(&bad).is_err() {
                rejected += 1;
            }
        }
        assert_eq!(rejected, 10_000);
    }

    #[test]
    fn replay_rejected() {
        let mut pool = KeyPool::preseeded(512, &mut seeded(6));
        let rx_pool = pool.clone();
        let mut tx = FrameSender::new();
        let f0 = tx.encrypt_frame(&mut pool, b"a", 10).unwrap();
        let f1 = tx.encrypt_frame(&mut pool, b"b", 11).unwrap();
        let mut rx = FrameReceiver::new(&rx_pool);
        assert!(rx.decrypt_verify(&f0).is_ok());
        assert_eq!(rx.decrypt_verify(&f0), Err(Rejection::Replay));
        assert!(rx.decrypt_verify(&f1).is_ok());
        assert_eq!(rx.decrypt_verify(&f0), Err(Rejection::Replay));
    }

    #[test]
    fn unknown_key() {
        let mut pool = KeyPool::preseeded(256, &mut seeded(7));
        let f = FrameSender::new().encrypt_frame(&mut pool, b"x", 0).unwrap();
        let small = KeyPool::new();
        assert_eq!(FrameReceiver::new(&small).decrypt_verify(&f), Err(Rejection::UnknownKey));
    }

    #[test]
    fn stream_chunking_and_split() {
        let mut pool = KeyPool::preseeded(128 * 10, &mut seeded(8));
        let rx_pool = pool.clone();
        let data: Vec<u8> = (0..(MAX_PAYLOAD * 2 + 100)).map(|i| i as u8).collect();
        let frames = FrameSender::new().encrypt_stream(&mut pool, &data, 0).unwrap();
        assert_eq!(frames.len(), 3);
        let file: Vec<u8> = frames.concat();
        let back = split_frames(&file);
        assert_eq!(back, frames);
        let mut rx = FrameReceiver::new(&rx_pool);
        let plain: Vec<u8> = back.iter().flat_map(|f| rx.decrypt_verify(f).unwrap()).collect();
        assert_eq!(plain, data);
    }
}
