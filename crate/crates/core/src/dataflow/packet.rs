use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Values carried by one packet. Sized for the widest (merged) packet.
pub type Values = SmallVec<[f64; 64]>;

/// A fixed-size slice of a logical vector, stamped with the image it
/// belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub values: Values,
    pub base_index: usize,
    pub tag: u64,
}

impl Packet {
    pub fn new(values: &[f64], base_index: usize, tag: u64) -> Self {
        Packet {
            values: Values::from_slice(values),
            base_index,
            tag,
        }
    }

    /// Single-value control packet.
    pub fn token(tag: u64, value: f64) -> Self {
        Packet::new(&[value], 0, tag)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_divisible(len: usize, packet_len: usize) -> Result<()> {
    if packet_len == 0 || !len.is_multiple_of(packet_len) {
        return Err(Error::Config(format!(
            "vector length {len} is not divisible by packet length {packet_len}"
        )));
    }
    Ok(())
}

/// Cut `v` into consecutive packets of `packet_len` values.
pub fn packetize(v: &[f64], packet_len: usize, tag: u64) -> Result<Vec<Packet>> {
    check_divisible(v.len(), packet_len)?;
    Ok(v.chunks(packet_len)
        .enumerate()
        .map(|(k, c)| Packet::new(c, k * packet_len, tag))
        .collect())
}

/// Reassemble a vector of length `len`, requiring every index to be covered
/// exactly once.
pub fn depacketize(packets: &[Packet], len: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; len];
    let mut seen = vec![false; len];
    for p in packets {
        let end = p.base_index + p.len();
        if end > len {
            return Err(Error::Sync(format!(
                "packet [{}, {end}) overruns vector of length {len}",
                p.base_index
            )));
        }
        for (k, &x) in p.values.iter().enumerate() {
            let i = p.base_index + k;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Sync(format!("index {i} delivered twice")));
            }
            out[i] = x;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Sync(format!("index {i} never delivered")));
    }
    Ok(out)
}

/// Concatenate one packet from each partition into a single index-ordered
/// packet. All parts must carry the same tag and adjacent index ranges.
pub fn merge_packets(parts: &[Packet]) -> Result<Packet> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Sync("merge of zero packets".into()))?;
    let mut values = Values::new();
    let mut next = first.base_index;
    for (k, p) in parts.iter().enumerate() {
        if p.tag != first.tag {
            return Err(Error::Sync(format!(
                "merge input {k} carries image {} while input 0 carries image {}",
                p.tag, first.tag
            )));
        }
        if p.base_index != next {
            return Err(Error::Sync(format!(
                "merge input {k} starts at index {}, expected {next}",
                p.base_index
            )));
        }
        next += p.len();
        values.extend_from_slice(&p.values);
    }
    Ok(Packet {
        values,
        base_index: first.base_index,
        tag: first.tag,
    })
}

/// Inverse of [`merge_packets`].
pub fn split_packet(p: &Packet, parts: usize) -> Result<Vec<Packet>> {
    check_divisible(p.len(), parts)?;
    let n = p.len() / parts;
    Ok(p.values
        .chunks(n)
        .enumerate()
        .map(|(k, c)| Packet::new(c, p.base_index + k * n, p.tag))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sixty_four_into_four() {
        let v: Vec<f64> = (0..64).map(|x| x as f64).collect();
        let ps = packetize(&v, 16, 7).unwrap();
        let bases: Vec<usize> = ps.iter().map(|p| p.base_index).collect();
        assert_eq!(bases, vec![0, 16, 32, 48]);
        assert!(ps.iter().all(|p| p.tag == 7 && p.len() == 16));
    }

    #[test]
    fn whole_vector_packet() {
        let v = vec![1.5; 10];
        let ps = packetize(&v, 10, 0).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(depacketize(&ps, 10).unwrap(), v);
    }

    #[test]
    fn divisibility_enforced() {
        assert!(matches!(packetize(&[0.0; 10], 4, 0), Err(Error::Config(_))));
        assert!(packetize(&[0.0; 10], 0, 0).is_err());
    }

    #[test]
    fn depacketize_detects_gaps_and_duplicates() {
        let ps = packetize(&[1.0; 8], 4, 0).unwrap();
        assert!(depacketize(&ps[..1], 8).is_err());
        assert!(depacketize(&[ps[0].clone(), ps[0].clone()], 8).is_err());
    }

    #[test]
    fn merge_in_index_order() {
        let v: Vec<f64> = (0..64).map(|x| x as f64 * 0.5).collect();
        let parts = packetize(&v, 16, 3).unwrap();
        let m = merge_packets(&parts).unwrap();
        assert_eq!(m.values.as_slice(), v.as_slice());
        assert_eq!((m.base_index, m.tag), (0, 3));
        assert_eq!(split_packet(&m, 4).unwrap(), parts);
    }

    #[test]
    fn merge_rejects_skewed_tags() {
        let mut parts = packetize(&[0.0; 64], 16, 3).unwrap();
        parts[2].tag = 4;
        assert!(matches!(merge_packets(&parts), Err(Error::Sync(_))));
    }

    #[test]
    fn merge_rejects_misaligned_ranges() {
        let mut parts = packetize(&[0.0; 64], 16, 0).unwrap();
        parts.swap(1, 2);
        assert!(matches!(merge_packets(&parts), Err(Error::Sync(_))));
    }

    proptest! {
        #[test]
        fn round_trip_bitwise(v in prop::collection::vec(any::<f64>(), 4096..=4096)) {
            let ps = packetize(&v, 16, 1).unwrap();
            let back = depacketize(&ps, v.len()).unwrap();
            prop_assert!(back.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()));
            let mut covered: Vec<usize> = ps.iter().flat_map(|p| p.base_index..p.base_index + p.len()).collect();
            covered.sort_unstable();
            prop_assert_eq!(covered, (0..4096).collect::<Vec<_>>());
        }

        #[test]
        fn merge_split_round_trip(v in prop::collection::vec(any::<f64>(), 256..=256)) {
            let ps = packetize(&v, 16, 9).unwrap();
            for group in ps.chunks(4) {
                let m = merge_packets(group).unwrap();
                let back = split_packet(&m, 4).unwrap();
                for (a, b) in back.iter().zip(group) {
                    prop_assert_eq!(a.base_index, b.base_index);
                    prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
                }
            }
        }
    }
}
