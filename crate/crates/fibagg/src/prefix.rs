//! Address and prefix types for the routing trie.
//!
//! A prefix is a bit string of a declared length inside a fixed-width
//! address family. Bits are stored right-aligned in a `u128`, so the
//! first (most significant) bit of the address occupies bit `width - 1`
//! of the value. Bit indexing is zero-based from the most significant
//! bit, matching the order in which a trie consumes address bits.
//!
//! Prefixes are canonical: every bit past the prefix length is zero.
//! Construction and parsing reject non-canonical input rather than
//! silently masking it, so a prefix compares equal if and only if it
//! denotes the same address block.
//!
//! Besides IPv4 and IPv6 this module supports small "toy" families of
//! 4 to 16 bits. Toy families keep exhaustive, per-address verification
//! affordable in tests and fuzz runs.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use thiserror::Error;

/// Smallest allowed toy family width.
pub const MIN_TOY_WIDTH: u8 = 4;
/// Largest allowed toy family width.
pub const MAX_TOY_WIDTH: u8 = 16;

/// Fixed-width address family a prefix or address belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AddressFamily {
    V4,
    V6,
    /// Reduced-width family for exhaustive testing; width is 4..=16 bits.
    Toy(u8),
}

impl AddressFamily {
    /// Checked constructor for a toy family.
    pub fn toy(width: u8) -> Result<Self, PrefixError> {
        if (MIN_TOY_WIDTH..=MAX_TOY_WIDTH).contains(&width) {
            Ok(AddressFamily::Toy(width))
        } else {
            Err(PrefixError::InvalidToyWidth { width })
        }
    }

    /// Address width in bits.
    #[inline]
    pub const fn width(self) -> u8 {
        match self {
            AddressFamily::V4 => 32,
            AddressFamily::V6 => 128,
            AddressFamily::Toy(w) => w,
        }
    }
}

impl fmt::Display for AddressFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AddressFamily::V4 => write!(f, "v4"),
            AddressFamily::V6 => write!(f, "v6"),
            AddressFamily::Toy(w) => write!(f, "toy{w}"),
        }
    }
}

/// Error raised by prefix and address construction or parsing.
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum PrefixError {
    #[error("malformed {what} '{text}': {reason}")]
    Malformed {
        what: &'static str,
        text: String,
        reason: String,
    },
    #[error("prefix length {length} exceeds {width}-bit family width")]
    LengthOutOfRange { length: u32, width: u8 },
    #[error("prefix has non-zero bits beyond its declared length")]
    HostBitsSet,
    #[error("toy family width {width} outside {MIN_TOY_WIDTH}..={MAX_TOY_WIDTH}")]
    InvalidToyWidth { width: u8 },
}

/// Mask selecting the first `len` bits of a `width`-bit address value.
#[inline]
fn high_mask(width: u8, len: u8) -> u128 {
    debug_assert!(len <= width && width <= 128);
    if len == 0 {
        0
    } else {
        (!0u128 >> (128 - len as u32)) << (width - len) as u32
    }
}

/// An address block: the first `len` bits of a `width`-bit address.
///
/// Ordering is lexicographic by family, then address bits, then length,
/// which is the order route snapshots are written in.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IpPrefix {
    family: AddressFamily,
    bits: u128,
    len: u8,
}

impl IpPrefix {
    /// Builds a prefix, rejecting out-of-range lengths and set host bits.
    pub fn new(family: AddressFamily, bits: u128, len: u8) -> Result<Self, PrefixError> {
        let width = family.width();
        if len > width {
            return Err(PrefixError::LengthOutOfRange {
                length: len as u32,
                width,
            });
        }
        if bits & !high_mask(width, len) != 0 {
            return Err(PrefixError::HostBitsSet);
        }
        Ok(IpPrefix { family, bits, len })
    }

    /// The zero-length prefix covering the whole family.
    pub fn default_route(family: AddressFamily) -> Self {
        IpPrefix {
            family,
            bits: 0,
            len: 0,
        }
    }

    /// The first `len` bits of `addr` as a prefix.
    pub fn from_address(addr: IpAddress, len: u8) -> Self {
        debug_assert!(len <= addr.family.width());
        IpPrefix {
            family: addr.family,
            bits: addr.bits & high_mask(addr.family.width(), len),
            len,
        }
    }

    #[inline]
    pub fn family(&self) -> AddressFamily {
        self.family
    }

    // A zero-length prefix is the default route, not an empty value,
    // so no `is_empty` counterpart exists.
    #[allow(clippy::len_without_is_empty)]
    #[inline]
    pub fn len(&self) -> u8 {
        self.len
    }

    #[inline]
    pub fn is_default_route(&self) -> bool {
        self.len == 0
    }

    /// Raw address bits, right-aligned in the family width.
    #[inline]
    pub fn bits(&self) -> u128 {
        self.bits
    }

    /// Bit `index` of the prefix, zero-based from the most significant bit.
    ///
    /// Panics if `index >= len`.
    #[inline]
    pub fn bit_at(&self, index: u8) -> u8 {
        assert!(index < self.len, "bit index {index} beyond prefix length");
        ((self.bits >> (self.family.width() - 1 - index) as u32) & 1) as u8
    }

    /// Whether `self` covers `other`, i.e. `other` extends `self`.
    ///
    /// Reflexive. Panics on a family mismatch.
    #[inline]
    pub fn covers(&self, other: &IpPrefix) -> bool {
        assert_eq!(self.family, other.family, "family mismatch");
        self.len <= other.len && other.bits & high_mask(self.family.width(), self.len) == self.bits
    }

    /// Whether `self` covers the address. Panics on a family mismatch.
    #[inline]
    pub fn covers_address(&self, addr: IpAddress) -> bool {
        assert_eq!(self.family, addr.family, "family mismatch");
        addr.bits & high_mask(self.family.width(), self.len) == self.bits
    }

    /// Length of the longest common prefix of two prefixes.
    ///
    /// Capped at the shorter of the two lengths. Panics on a family
    /// mismatch.
    pub fn common_prefix_len(&self, other: &IpPrefix) -> u8 {
        assert_eq!(self.family, other.family, "family mismatch");
        let limit = self.len.min(other.len);
        let width = self.family.width();
        // Align the family's most significant bit with bit 127 so that
        // leading_zeros counts address bits directly.
        let diff = (self.bits ^ other.bits) << (128 - width as u32);
        (diff.leading_zeros() as u8).min(limit)
    }

    /// The first `len` bits of `self` as a shorter prefix.
    ///
    /// Panics if `len > self.len()`.
    pub fn truncated(&self, len: u8) -> IpPrefix {
        assert!(len <= self.len, "cannot truncate {self} to /{len}");
        IpPrefix {
            family: self.family,
            bits: self.bits & high_mask(self.family.width(), len),
            len,
        }
    }
}

impl fmt::Display for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            AddressFamily::V4 => write!(f, "{}/{}", Ipv4Addr::from(self.bits as u32), self.len),
            AddressFamily::V6 => write!(f, "{}/{}", Ipv6Addr::from(self.bits), self.len),
            AddressFamily::Toy(w) => {
                write!(
                    f,
                    "{:0>width$b}/{}",
                    self.bits,
                    self.len,
                    width = w as usize
                )
            }
        }
    }
}

impl fmt::Debug for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A single address in some family.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IpAddress {
    family: AddressFamily,
    bits: u128,
}

impl IpAddress {
    /// Builds an address, rejecting bits outside the family width.
    pub fn new(family: AddressFamily, bits: u128) -> Result<Self, PrefixError> {
        if bits & !high_mask(family.width(), family.width()) != 0 {
            return Err(PrefixError::Malformed {
                what: "address",
                text: format!("{bits:#x}"),
                reason: format!("value wider than {} bits", family.width()),
            });
        }
        Ok(IpAddress { family, bits })
    }

    #[inline]
    pub fn family(&self) -> AddressFamily {
        self.family
    }

    #[inline]
    pub fn bits(&self) -> u128 {
        self.bits
    }

    /// Bit `index`, zero-based from the most significant bit.
    ///
    /// Panics if `index >= width`.
    #[inline]
    pub fn bit_at(&self, index: u8) -> u8 {
        let width = self.family.width();
        assert!(index < width, "bit index {index} beyond address width");
        ((self.bits >> (width - 1 - index) as u32) & 1) as u8
    }
}

impl fmt::Display for IpAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            AddressFamily::V4 => write!(f, "{}", Ipv4Addr::from(self.bits as u32)),
            AddressFamily::V6 => write!(f, "{}", Ipv6Addr::from(self.bits)),
            AddressFamily::Toy(w) => write!(f, "{:0>width$b}", self.bits, width = w as usize),
        }
    }
}

impl fmt::Debug for IpAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

fn malformed(what: &'static str, text: &str, reason: impl Into<String>) -> PrefixError {
    PrefixError::Malformed {
        what,
        text: text.to_string(),
        reason: reason.into(),
    }
}

fn parse_bits(text: &str, family: AddressFamily, original: &str) -> Result<u128, PrefixError> {
    match family {
        AddressFamily::V4 => Ipv4Addr::from_str(text)
            .map(|a| u32::from(a) as u128)
            .map_err(|e| malformed("prefix", original, e.to_string())),
        AddressFamily::V6 => Ipv6Addr::from_str(text)
            .map(u128::from)
            .map_err(|e| malformed("prefix", original, e.to_string())),
        AddressFamily::Toy(w) => {
            if text.len() != w as usize {
                return Err(malformed(
                    "prefix",
                    original,
                    format!("expected exactly {w} binary digits"),
                ));
            }
            u128::from_str_radix(text, 2).map_err(|e| malformed("prefix", original, e.to_string()))
        }
    }
}

/// Parses `address/len` in the given family.
///
/// IPv4 uses dotted-quad, IPv6 colon-hex, toy families a full-width
/// binary string. Host bits set past the length are an error.
pub fn parse_prefix(text: &str, family: AddressFamily) -> Result<IpPrefix, PrefixError> {
    let (addr_part, len_part) = text
        .split_once('/')
        .ok_or_else(|| malformed("prefix", text, "missing '/<length>'"))?;
    let len: u32 = len_part
        .parse()
        .map_err(|_| malformed("prefix", text, format!("bad length '{len_part}'")))?;
    if len > family.width() as u32 {
        return Err(PrefixError::LengthOutOfRange {
            length: len,
            width: family.width(),
        });
    }
    let bits = parse_bits(addr_part, family, text)?;
    IpPrefix::new(family, bits, len as u8)
}

/// Parses a bare address in the given family.
pub fn parse_address(text: &str, family: AddressFamily) -> Result<IpAddress, PrefixError> {
    let bits = match family {
        AddressFamily::V4 => Ipv4Addr::from_str(text)
            .map(|a| u32::from(a) as u128)
            .map_err(|e| malformed("address", text, e.to_string()))?,
        AddressFamily::V6 => Ipv6Addr::from_str(text)
            .map(u128::from)
            .map_err(|e| malformed("address", text, e.to_string()))?,
        AddressFamily::Toy(w) => {
            if text.len() != w as usize {
                return Err(malformed(
                    "address",
                    text,
                    format!("expected exactly {w} binary digits"),
                ));
            }
            u128::from_str_radix(text, 2).map_err(|e| malformed("address", text, e.to_string()))?
        }
    };
    IpAddress::new(family, bits)
}
