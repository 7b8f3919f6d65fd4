//! Routing traces: the per-layer, per-token top-k expert selections recorded
//! during profiling, plus a synthetic generator with planted co-activation
//! blocks and Zipf popularity skew.
//!
//! On disk a trace is JSON Lines. The first line is a header
//! `{"layers":L,"experts":N,"top_k":K,"tokens":T}`; each following line is one
//! record `{"l":layer,"t":token,"e":[expert,...]}`.

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::HashWriter;
use crate::rng;

/// Expert index as stored in a trace.
pub type ExpertId = u16;

const MAX_EXPERTS: usize = ExpertId::MAX as usize + 1;
const LAYOUT_SALT: u64 = 0x6d6f_6570_6c61_6e31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelShape {
    pub num_layers: usize,
    pub num_experts: usize,
    pub top_k: usize,
}

impl ModelShape {
    pub fn new(num_layers: usize, num_experts: usize, top_k: usize) -> Result<Self> {
        let shape = Self {
            num_layers,
            num_experts,
            top_k,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::invalid("model shape needs at least one layer"));
        }
        if self.top_k == 0 || self.top_k > self.num_experts {
            return Err(Error::invalid(format!(
                "top_k must lie in [1, {}], got {}",
                self.num_experts, self.top_k
            )));
        }
        if self.num_experts > MAX_EXPERTS {
            return Err(Error::invalid(format!(
                "at most {MAX_EXPERTS} experts per layer are supported"
            )));
        }
        Ok(())
    }

    /// Published MoE layer shapes: `olmoe`, `deepseek_v2_lite`, `qwen3_30b`.
    pub fn preset(name: &str) -> Option<Self> {
        let (num_layers, num_experts, top_k) = match name {
            "olmoe" => (16, 64, 8),
            "deepseek_v2_lite" => (26, 64, 6),
            "qwen3_30b" => (48, 128, 8),
            _ => return None,
        };
        Some(Self {
            num_layers,
            num_experts,
            top_k,
        })
    }

    pub const PRESETS: [&'static str; 3] = ["olmoe", "deepseek_v2_lite", "qwen3_30b"];
}

/// One owned trace record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub layer: usize,
    pub token: usize,
    pub experts: Vec<usize>,
}

/// Routing trace with exactly one record per `(layer, token)`.
///
/// Selections are stored flat, layer-major, `top_k` entries per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTrace {
    shape: ModelShape,
    num_tokens: usize,
    selections: Vec<ExpertId>,
}

impl RoutingTrace {
    /// Builds a trace from records, checking every invariant.
    pub fn from_records(
        shape: ModelShape,
        num_tokens: usize,
        records: impl IntoIterator<Item = TraceRecord>,
    ) -> Result<Self> {
        let mut builder = TraceBuilder::new(shape, num_tokens)?;
        for rec in records {
            builder.insert(rec.layer, rec.token, &rec.experts)?;
        }
        builder.finish()
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn num_records(&self) -> usize {
        self.shape.num_layers * self.num_tokens
    }

    /// Selected experts of `token` in `layer`, in selection order.
    #[inline]
    pub fn experts(&self, layer: usize, token: usize) -> &[ExpertId] {
        let k = self.shape.top_k;
        let start = (layer * self.num_tokens + token) * k;
        &self.selections[start..start + k]
    }

    /// Per-token selections of one layer, in token order.
    pub fn layer(&self, layer: usize) -> impl ExactSizeIterator<Item = &[ExpertId]> + '_ {
        let k = self.shape.top_k;
        let start = layer * self.num_tokens * k;
        self.selections[start..start + self.num_tokens * k].chunks_exact(k)
    }

    /// All records sorted by `(layer, token)`.
    pub fn records(&self) -> impl Iterator<Item = TraceRecord> + '_ {
        (0..self.shape.num_layers).flat_map(move |layer| {
            (0..self.num_tokens).map(move |token| TraceRecord {
                layer,
                token,
                experts: self
                    .experts(layer, token)
                    .iter()
                    .map(|&e| e as usize)
                    .collect(),
            })
        })
    }

    /// SHA-256 of the canonical JSONL encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = HashWriter::new();
        save_trace(self, &mut hasher).expect("hashing sink never fails");
        hasher.finish_hex()
    }
}

struct TraceBuilder {
    shape: ModelShape,
    num_tokens: usize,
    selections: Vec<ExpertId>,
    seen: Vec<bool>,
    filled: usize,
}

impl TraceBuilder {
    fn new(shape: ModelShape, num_tokens: usize) -> Result<Self> {
        shape.validate()?;
        let cells = shape
            .num_layers
            .checked_mul(num_tokens)
            .ok_or_else(|| Error::invalid("trace too large"))?;
        Ok(Self {
            shape,
            num_tokens,
            selections: vec![0; cells * shape.top_k],
            seen: vec![false; cells],
            filled: 0,
        })
    }

    fn insert(&mut self, layer: usize, token: usize, experts: &[usize]) -> Result<()> {
        let shape = self.shape;
        if layer >= shape.num_layers {
            return Err(Error::integrity(format!(
                "layer {layer} out of range (layers = {})",
                shape.num_layers
            )));
        }
        if token >= self.num_tokens {
            return Err(Error::integrity(format!(
                "token {token} out of range (tokens = {})",
                self.num_tokens
            )));
        }
        if experts.len() != shape.top_k {
            return Err(Error::integrity(format!(
                "layer {layer} token {token}: expected {} experts, found {}",
                shape.top_k,
                experts.len()
            )));
        }
        for (i, &e) in experts.iter().enumerate() {
            if e >= shape.num_experts {
                return Err(Error::integrity(format!(
                    "layer {layer} token {token}: expert {e} out of range (experts = {})",
                    shape.num_experts
                )));
            }
            if experts[..i].contains(&e) {
                return Err(Error::integrity(format!(
                    "layer {layer} token {token}: expert {e} selected twice"
                )));
            }
        }
        let cell = layer * self.num_tokens + token;
        if std::mem::replace(&mut self.seen[cell], true) {
            return Err(Error::integrity(format!(
                "duplicate record for layer {layer} token {token}"
            )));
        }
        let k = shape.top_k;
        for (slot, &e) in self.selections[cell * k..(cell + 1) * k]
            .iter_mut()
            .zip(experts)
        {
            *slot = e as ExpertId;
        }
        self.filled += 1;
        Ok(())
    }

    fn finish(self) -> Result<RoutingTrace> {
        if self.filled != self.seen.len() {
            let missing = self.seen.iter().position(|s| !s).unwrap_or(0);
            return Err(Error::integrity(format!(
                "{} records missing, first gap at layer {} token {}",
                self.seen.len() - self.filled,
                missing / self.num_tokens.max(1),
                missing % self.num_tokens.max(1)
            )));
        }
        Ok(RoutingTrace {
            shape: self.shape,
            num_tokens: self.num_tokens,
            selections: self.selections,
        })
    }
}

// ---- JSONL I/O ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    layers: usize,
    experts: usize,
    top_k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line<E> {
    l: usize,
    t: usize,
    e: E,
}

/// Input formats accepted by [`load_trace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceFormat {
    #[default]
    Jsonl,
}

/// Reads a trace. When the header omits `tokens` the count is inferred as
/// one past the largest token index seen.
pub fn load_trace(source: impl BufRead, format: TraceFormat) -> Result<RoutingTrace> {
    match format {
        TraceFormat::Jsonl => load_jsonl(source),
    }
}

fn load_jsonl(source: impl BufRead) -> Result<RoutingTrace> {
    let mut lines = source.lines().enumerate();
    let header: Header = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        break serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: format!("bad header: {e}"),
        })?;
    };
    let shape = ModelShape {
        num_layers: header.layers,
        num_experts: header.experts,
        top_k: header.top_k,
    };
    shape.validate().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;

    let parse_line = |idx: usize, line: &str| -> Result<Line<Vec<usize>>> {
        serde_json::from_str(line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })
    };
    let with_line = |idx: usize, e: Error| match e {
        Error::Integrity(m) => Error::Integrity(format!("line {}: {m}", idx + 1)),
        other => other,
    };

    match header.tokens {
        Some(num_tokens) => {
            let mut builder = TraceBuilder::new(shape, num_tokens)?;
            for (idx, line) in lines {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec = parse_line(idx, &line)?;
                builder
                    .insert(rec.l, rec.t, &rec.e)
                    .map_err(|e| with_line(idx, e))?;
            }
            builder.finish()
        }
        None => {
            let mut records = Vec::new();
            let mut num_tokens = 0;
            for (idx, line) in lines {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec = parse_line(idx, &line)?;
                num_tokens = num_tokens.max(rec.t + 1);
                records.push((idx, rec));
            }
            let mut builder = TraceBuilder::new(shape, num_tokens)?;
            for (idx, rec) in records {
                builder
                    .insert(rec.l, rec.t, &rec.e)
                    .map_err(|e| with_line(idx, e))?;
            }
            builder.finish()
        }
    }
}

/// Writes the canonical JSONL encoding, records sorted by `(layer, token)`.
pub fn save_trace(trace: &RoutingTrace, mut sink: impl Write) -> Result<()> {
    let shape = trace.shape;
    serde_json::to_writer(
        &mut sink,
        &Header {
            layers: shape.num_layers,
            experts: shape.num_experts,
            top_k: shape.top_k,
            tokens: Some(trace.num_tokens),
        },
    )?;
    sink.write_all(b"\n")?;
    for layer in 0..shape.num_layers {
        for (token, experts) in trace.layer(layer).enumerate() {
            serde_json::to_writer(
                &mut sink,
                &Line {
                    l: layer,
                    t: token,
                    e: experts,
                },
            )?;
            sink.write_all(b"\n")?;
        }
    }
    sink.flush()?;
    Ok(())
}

// ---- Synthetic generation ----

/// Parameters of the synthetic trace generator.
///
/// Experts of every layer are split into `num_blocks` co-activation blocks.
/// The block layout depends only on `(num_experts, num_blocks, layer)`, never
/// on `seed`, so traces drawn with different seeds share one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub shape: ModelShape,
    pub num_tokens: usize,
    pub num_blocks: usize,
    pub within_block_prob: f64,
    pub popularity_skew: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.num_blocks == 0 || self.num_blocks > self.shape.num_experts {
            return Err(Error::invalid(format!(
                "num_blocks must lie in [1, {}], got {}",
                self.shape.num_experts, self.num_blocks
            )));
        }
        if !(0.0..=1.0).contains(&self.within_block_prob) {
            return Err(Error::invalid(format!(
                "within_block_prob must lie in [0, 1], got {}",
                self.within_block_prob
            )));
        }
        if !(self.popularity_skew >= 0.0 && self.popularity_skew.is_finite()) {
            return Err(Error::invalid(format!(
                "popularity_skew must be finite and >= 0, got {}",
                self.popularity_skew
            )));
        }
        Ok(())
    }

    /// Blocks of `layer`, each listed in descending popularity order.
    /// Block 0 is the most popular home block.
    pub fn block_layout(&self, layer: usize) -> Vec<Vec<usize>> {
        block_layout(self.shape.num_experts, self.num_blocks, layer)
    }
}

fn block_layout(num_experts: usize, num_blocks: usize, layer: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..num_experts).collect();
    let mut rng = rng::stream(
        LAYOUT_SALT,
        &[num_experts as u64, num_blocks as u64, layer as u64],
    );
    order.shuffle(&mut rng);
    let base = num_experts / num_blocks;
    let extra = num_experts % num_blocks;
    let mut blocks = Vec::with_capacity(num_blocks);
    let mut start = 0;
    for b in 0..num_blocks {
        let len = base + usize::from(b < extra);
        blocks.push(order[start..start + len].to_vec());
        start += len;
    }
    blocks
}

fn zipf_weights(len: usize, exponent: f64) -> Vec<f64> {
    (1..=len)
        .map(|rank| (rank as f64).powf(-exponent))
        .collect()
}

/// Draws a synthetic trace. Deterministic for a fixed spec, including seed.
///
/// Each `(layer, token)` draws a Zipf-distributed home block. Each of the
/// `top_k` selections comes from the home block with probability
/// `within_block_prob` (Zipf popularity within the block), otherwise
/// uniformly from all experts. Duplicates are rejected and redrawn; a block
/// with no unselected expert left falls back to the uniform pool.
pub fn generate_synthetic_trace(spec: &SyntheticSpec) -> Result<RoutingTrace> {
    spec.validate()?;
    let shape = spec.shape;
    let n = shape.num_experts;
    let k = shape.top_k;

    let block_pick = WeightedIndex::new(zipf_weights(spec.num_blocks, spec.popularity_skew))
        .expect("zipf weights are positive");

    let mut selections = Vec::with_capacity(shape.num_layers * spec.num_tokens * k);
    let mut chosen = vec![false; n];
    let mut picked: Vec<usize> = Vec::with_capacity(k);

    for layer in 0..shape.num_layers {
        let blocks = block_layout(n, spec.num_blocks, layer);
        let within: Vec<WeightedIndex<f64>> = blocks
            .iter()
            .map(|b| {
                WeightedIndex::new(zipf_weights(b.len(), spec.popularity_skew))
                    .expect("zipf weights are positive")
            })
            .collect();

        for token in 0..spec.num_tokens {
            let mut rng = rng::stream(spec.seed, &[layer as u64, token as u64]);
            let home = block_pick.sample(&mut rng);
            let block = &blocks[home];
            picked.clear();

            for _ in 0..k {
                let use_block = rng.random::<f64>() < spec.within_block_prob
                    && picked.iter().filter(|e| block.contains(e)).count() < block.len();
                let expert = if use_block {
                    draw_distinct(&mut rng, &chosen, |r| block[within[home].sample(r)])
                } else {
                    draw_distinct(&mut rng, &chosen, |r| r.random_range(0..n))
                };
                chosen[expert] = true;
                picked.push(expert);
            }
            for &e in &picked {
                chosen[e] = false;
                selections.push(e as ExpertId);
            }
        }
    }

    Ok(RoutingTrace {
        shape,
        num_tokens: spec.num_tokens,
        selections,
    })
}

fn draw_distinct<R: Rng>(
    rng: &mut R,
    chosen: &[bool],
    mut draw: impl FnMut(&mut R) -> usize,
) -> usize {
    loop {
        let e = draw(rng);
        if !chosen[e] {
            return e;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, k: usize, blocks: usize, layers: usize, tokens: usize) -> SyntheticSpec {
        SyntheticSpec {
            shape: ModelShape::new(layers, n, k).unwrap(),
            num_tokens: tokens,
            num_blocks: blocks,
            within_block_prob: 0.9,
            popularity_skew: 1.0,
            seed: 7,
        }
    }

    fn to_bytes(trace: &RoutingTrace) -> Vec<u8> {
        let mut buf = Vec::new();
        save_trace(trace, &mut buf).unwrap();
        buf
    }

    #[test]
    fn full_selection_when_k_equals_n() {
        let trace = generate_synthetic_trace(&spec(4, 4, 1, 1, 1)).unwrap();
        let mut e: Vec<_> = trace.experts(0, 0).to_vec();
        e.sort_unstable();
        assert_eq!(e, vec![0, 1, 2, 3]);
    }

    #[test]
    fn certain_block_draws_stay_in_one_block() {
        let mut s = spec(64, 8, 4, 2, 500);
        s.within_block_prob = 1.0;
        let trace = generate_synthetic_trace(&s).unwrap();
        for layer in 0..2 {
            let layout = s.block_layout(layer);
            assert!(layout.iter().all(|b| b.len() == 16));
            for experts in trace.layer(layer) {
                let home = layout
                    .iter()
                    .find(|b| b.contains(&(experts[0] as usize)))
                    .unwrap();
                assert!(experts.iter().all(|&e| home.contains(&(e as usize))));
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = spec(32, 4, 4, 3, 200);
        let a = to_bytes(&generate_synthetic_trace(&s).unwrap());
        let b = to_bytes(&generate_synthetic_trace(&s).unwrap());
        assert_eq!(a, b);
        let mut other = s.clone();
        other.seed = 8;
        assert_ne!(a, to_bytes(&generate_synthetic_trace(&other).unwrap()));
    }

    #[test]
    fn layout_is_seed_independent() {
        let mut a = spec(64, 8, 4, 1, 1);
        let b = spec(64, 8, 4, 1, 1);
        a.seed = 1234;
        assert_eq!(a.block_layout(0), b.block_layout(0));
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut s = spec(8, 2, 2, 1, 1);
        s.num_blocks = 9;
        assert!(generate_synthetic_trace(&s).is_err());
        let mut s = spec(8, 2, 2, 1, 1);
        s.within_block_prob = 1.5;
        assert!(generate_synthetic_trace(&s).is_err());
        let mut s = spec(8, 2, 2, 1, 1);
        s.popularity_skew = -1.0;
        assert!(generate_synthetic_trace(&s).is_err());
        assert!(ModelShape::new(1, 4, 5).is_err());
        assert!(ModelShape::new(0, 4, 1).is_err());
    }

    #[test]
    fn coverage_and_distinctness() {
        let trace = generate_synthetic_trace(&spec(16, 6, 3, 3, 300)).unwrap();
        assert_eq!(trace.records().count(), 3 * 300);
        for rec in trace.records() {
            let mut e = rec.experts.clone();
            e.sort_unstable();
            e.dedup();
            assert_eq!(e.len(), 6);
        }
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        let mut s = spec(16, 2, 1, 1, 60_000);
        s.popularity_skew = 0.0;
        s.within_block_prob = 0.5;
        let trace = generate_synthetic_trace(&s).unwrap();
        let mut counts = [0usize; 16];
        for experts in trace.layer(0) {
            for &e in experts {
                counts[e as usize] += 1;
            }
        }
        let draws: f64 = 120_000.0;
        let p = 1.0 / 16.0;
        let mean = draws * p;
        let sigma = (draws * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!(
                (c as f64 - mean).abs() <= 3.0 * sigma,
                "{c} vs {mean}±{sigma}"
            );
        }
    }

    const MINIMAL: &str = "{\"layers\":2,\"experts\":4,\"top_k\":2}\n\
        {\"l\":0,\"t\":0,\"e\":[0,1]}\n\
        {\"l\":0,\"t\":1,\"e\":[2,3]}\n\
        {\"l\":1,\"t\":1,\"e\":[1,2]}\n\
        {\"l\":1,\"t\":0,\"e\":[3,0]}\n";

    #[test]
    fn load_minimal_file_infers_tokens() {
        let trace = load_trace(MINIMAL.as_bytes(), TraceFormat::Jsonl).unwrap();
        assert_eq!(trace.num_tokens(), 2);
        assert_eq!(trace.experts(1, 0), &[3, 0]);
    }

    #[test]
    fn load_rejects_wrong_arity() {
        let src = "{\"layers\":1,\"experts\":4,\"top_k\":2}\n{\"l\":0,\"t\":0,\"e\":[0,1,2]}\n";
        let err = load_trace(src.as_bytes(), TraceFormat::Jsonl).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn load_reports_line_of_malformed_record() {
        let src = "{\"layers\":1,\"experts\":4,\"top_k\":1}\n{\"l\":0,\"t\":0,\"e\":[0]}\n{\"l\":0,\"t\":1,\"e\":[1}\n";
        match load_trace(src.as_bytes(), TraceFormat::Jsonl).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn load_rejects_duplicates_and_out_of_range() {
        let dup = "{\"layers\":1,\"experts\":4,\"top_k\":1,\"tokens\":1}\n{\"l\":0,\"t\":0,\"e\":[0]}\n{\"l\":0,\"t\":0,\"e\":[1]}\n";
        assert!(matches!(
            load_trace(dup.as_bytes(), TraceFormat::Jsonl),
            Err(Error::Integrity(_))
        ));
        let oor =
            "{\"layers\":1,\"experts\":4,\"top_k\":1,\"tokens\":1}\n{\"l\":0,\"t\":0,\"e\":[4]}\n";
        assert!(matches!(
            load_trace(oor.as_bytes(), TraceFormat::Jsonl),
            Err(Error::Integrity(_))
        ));
        let repeated = "{\"layers\":1,\"experts\":4,\"top_k\":2,\"tokens\":1}\n{\"l\":0,\"t\":0,\"e\":[1,1]}\n";
        assert!(matches!(
            load_trace(repeated.as_bytes(), TraceFormat::Jsonl),
            Err(Error::Integrity(_))
        ));
        let missing =
            "{\"layers\":1,\"experts\":4,\"top_k\":1,\"tokens\":2}\n{\"l\":0,\"t\":0,\"e\":[1]}\n";
        assert!(matches!(
            load_trace(missing.as_bytes(), TraceFormat::Jsonl),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn round_trip_edge_sizes() {
        let empty = RoutingTrace::from_records(ModelShape::new(2, 4, 2).unwrap(), 0, []).unwrap();
        let single = RoutingTrace::from_records(
            ModelShape::new(1, 4, 2).unwrap(),
            1,
            [TraceRecord {
                layer: 0,
                token: 0,
                experts: vec![3, 1],
            }],
        )
        .unwrap();
        let large = generate_synthetic_trace(&spec(32, 4, 4, 2, 5_000)).unwrap();
        assert_eq!(large.num_records(), 10_000);
        for trace in [empty, single, large] {
            let bytes = to_bytes(&trace);
            let back = load_trace(bytes.as_slice(), TraceFormat::Jsonl).unwrap();
            assert_eq!(back, trace);
        }
    }

    #[test]
    fn presets_match_published_shapes() {
        assert_eq!(
            ModelShape::preset("olmoe"),
            Some(ModelShape::new(16, 64, 8).unwrap())
        );
        assert_eq!(
            ModelShape::preset("deepseek_v2_lite"),
            Some(ModelShape::new(26, 64, 6).unwrap())
        );
        assert_eq!(
            ModelShape::preset("qwen3_30b"),
            Some(ModelShape::new(48, 128, 8).unwrap())
        );
        assert_eq!(ModelShape::preset("mixtral"), None);
    }
}
