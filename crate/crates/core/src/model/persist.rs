use super::{LayerWidths, ModelParams};
use crate::codec::{put_f64s, put_u32, DecodeError, Reader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WSVM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Header followed by the eight parameter blocks as little-endian `f64`, row-major.
///
/// ```text
/// "WSVM" | version u32 | feature_dim u32 | fc u32 | gcn1 u32 | gcn2 u32 | out u32 | blocks...
/// ```
pub fn encode_params(params: &ModelParams, buf: &mut Vec<u8>) {
    let w = params.widths();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(buf, CHECKPOINT_VERSION);
    put_u32(buf, params.feature_dim() as u32);
    for width in [w.fc, w.gcn1, w.gcn2, 1] {
        put_u32(buf, width as u32);
    }
    for block in params.blocks() {
        put_f64s(buf, block);
    }
}

pub fn decode_params(r: &mut Reader<'_>) -> Result<ModelParams, DecodeError> {
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(DecodeError(format!("bad magic {magic:?}, expected \"WSVM\"")));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(DecodeError(format!("unsupported checkpoint version {version}")));
    }
    let feature_dim = r.u32()? as usize;
    let widths = LayerWidths {
        fc: r.u32()? as usize,
        gcn1: r.u32()? as usize,
        gcn2: r.u32()? as usize,
    };
    let out = r.u32()?;
    if out != 1 {
        return Err(DecodeError(format!("output width must be 1, found {out}")));
    }
    if feature_dim == 0 || widths.fc == 0 || widths.gcn1 == 0 || widths.gcn2 == 0 {
        return Err(DecodeError("zero layer width in header".into()));
    }
    let mut params = ModelParams::zeros(feature_dim, widths);
    for block in params.blocks_mut() {
        let values = r.f64s(block.len())?;
        block.copy_from_slice(&values);
    }
    if !params.is_finite() {
        return Err(DecodeError("non-finite parameter".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::numcore::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let widths = LayerWidths { fc: 7, gcn1: 5, gcn2: 3 };
        let p = init_params(4, widths, &mut Rng::new(1)).unwrap();
        let mut buf = Vec::new();
        encode_params(&p, &mut buf);
        assert_eq!(&buf[..4], b"WSVM");
        assert_eq!(buf.len(), 4 + 4 * 6 + 8 * p.num_params());
        let q = decode_params(&mut Reader::new(&buf)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn header_layout() {
        let p = ModelParams::zeros(2, LayerWidths { fc: 3, gcn1: 2, gcn2: 1 });
        let mut buf = Vec::new();
        encode_params(&p, &mut buf);
        let words: Vec<u32> = buf[4..28]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(words, vec![1, 2, 3, 2, 1, 1]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = ModelParams::zeros(2, LayerWidths { fc: 3, gcn1: 2, gcn2: 1 });
        let mut buf = Vec::new();
        encode_params(&p, &mut buf);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(decode_params(&mut Reader::new(&bad)).is_err());
        assert!(decode_params(&mut Reader::new(&buf[..buf.len() - 1])).is_err());
    }
}
