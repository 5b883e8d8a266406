//! Content fingerprints for generation requests and their outputs.

use stablemorph_core::adapter::WeightData;
use stablemorph_core::GenerationRequest;

use crate::fsutil::FieldHasher;

/// Digest over every field of a request, including the merged weights and
/// identity values bit-for-bit.
pub fn request_digest(req: &GenerationRequest) -> String {
    let mut h = FieldHasher::new("stablemorph/request/1");
    h.str(&req.pair_id);
    match &req.merged_adapters {
        None => {
            h.u64(0);
        }
        Some(w) => {
            h.u64(1).u64(w.len() as u64);
            for (key, arr) in w.entries() {
                h.str(key).str(arr.dtype().as_str()).u64(arr.shape().len() as u64);
                for &d in arr.shape() {
                    h.u64(d as u64);
                }
                match arr.data() {
                    WeightData::F32(v) => v.iter().for_each(|x| {
                        h.u64(u64::from(x.to_bits()));
                    }),
                    WeightData::F64(v) => v.iter().for_each(|x| {
                        h.f64(*x);
                    }),
                }
            }
        }
    }
    match &req.merged_identity {
        None => {
            h.u64(0);
        }
        Some(e) => {
            h.u64(1).u64(e.n() as u64).u64(e.dim() as u64);
            e.as_row_major().iter().for_each(|x| {
                h.f64(*x);
            });
        }
    }
    h.str(&req.prompt)
        .str(&req.negative_prompt)
        .u64(req.seed)
        .u64(u64::from(req.steps))
        .u64(u64::from(req.outputs));
    h.finish()
}

pub fn request_fingerprint(req: &GenerationRequest, backend: &str, backend_version: &str) -> String {
    let mut h = FieldHasher::new("stablemorph/request-fingerprint/1");
    h.str(&request_digest(req)).str(backend).str(backend_version);
    h.finish()
}

/// Fingerprint of output `index` of a request.
pub fn artifact_fingerprint(request_fingerprint: &str, index: u32, seed: u64) -> String {
    let mut h = FieldHasher::new("stablemorph/artifact/1");
    h.str(request_fingerprint).u64(u64::from(index)).u64(seed);
    h.finish()
}
