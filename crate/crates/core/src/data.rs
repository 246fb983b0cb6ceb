//! Sequence ingestion, synthetic motion and training windows.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ad::{checkpoint::format_value, Array, RandomSource};
use crate::error::{Error, Result};
use crate::motion::{wrap_angle, MotionSequence, FRAME_RATE, POSE_DIM};
use crate::scalar::Scalar;

/// Which raw channels survive preprocessing.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSpec {
    /// `(joint name, channel count)` in file order; may be empty when the
    /// spec was read from a bare index list.
    pub joints: Vec<(String, usize)>,
    pub input_channels: Option<usize>,
    pub retained: Vec<usize>,
}

const LIMBS: [&str; 18] = [
    "spine", "spine1", "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder",
    "r_elbow", "r_wrist", "l_hip", "l_knee", "l_ankle", "l_toe", "r_hip", "r_knee", "r_ankle",
    "r_toe",
];

impl SkeletonSpec {
    /// 62 raw channels: root translation and orientation (6), eighteen
    /// 3-dof joints (54) and a 2-channel end site. Root and end site are
    /// dropped, leaving 54.
    pub fn human36m() -> Self {
        let mut joints = vec![("root".to_string(), 6)];
        joints.extend(LIMBS.iter().map(|j| (j.to_string(), 3)));
        joints.push(("head_end".to_string(), 2));
        let retained = (6..60).collect();
        Self {
            joints,
            input_channels: Some(62),
            retained,
        }
    }

    /// Keeps every one of `channels` channels.
    pub fn passthrough(channels: usize) -> Self {
        Self {
            joints: Vec::new(),
            input_channels: Some(channels),
            retained: (0..channels).collect(),
        }
    }

    /// Parses a spec file: each non-comment line holds retained channel
    /// indices separated by commas or whitespace.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut retained = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
                let idx = tok.parse::<usize>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: format!("bad channel index `{tok}`"),
                })?;
                if retained.contains(&idx) {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        detail: format!("channel {idx} listed twice"),
                    });
                }
                retained.push(idx);
            }
        }
        if retained.is_empty() {
            return Err(Error::Data(format!("{}: no retained channels", path.display())));
        }
        Ok(Self {
            joints: Vec::new(),
            input_channels: None,
            retained,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }

    pub fn output_dim(&self) -> usize {
        self.retained.len()
    }

    pub fn dropped(&self) -> Vec<usize> {
        match self.input_channels {
            Some(n) => (0..n).filter(|i| !self.retained.contains(i)).collect(),
            None => Vec::new(),
        }
    }

    fn accepts(&self, channels: usize) -> bool {
        match self.input_channels {
            Some(n) => n == channels,
            None => self.retained.iter().all(|&i| i < channels),
        }
    }
}

/// Stable label ↔ id assignment (sorted by name).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn from_sequences<S>(seqs: &[MotionSequence<S>]) -> Self {
        let mut names: Vec<String> = seqs.iter().filter_map(|s| s.label.clone()).collect();
        names.sort();
        names.dedup();
        Self { names }
    }

    pub fn from_names(mut names: Vec<String>) -> Self {
        names.sort();
        names.dedup();
        Self { names }
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct LoadReport<S> {
    pub sequences: Vec<MotionSequence<S>>,
    /// Sequences dropped for being shorter than the minimum length.
    pub discarded: usize,
}

fn parse_header(line: &str, path: &Path, lineno: usize) -> Result<Option<String>> {
    let mut label = None;
    for tok in line.trim_start_matches('#').split_whitespace() {
        let Some((k, v)) = tok.split_once('=') else { continue };
        match k {
            "label" => label = Some(v.to_string()),
            "fps" => {
                let fps: f64 = v.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    detail: format!("bad fps `{v}`"),
                })?;
                if fps != FRAME_RATE as f64 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno,
                        detail: format!("fps {v} unsupported; resample to {FRAME_RATE} upstream"),
                    });
                }
            }
            _ => {}
        }
    }
    Ok(label)
}

/// Parses one CSV sequence: channels selected by `spec`, angles wrapped.
pub fn parse_sequence<S: Scalar>(text: &str, path: &Path, spec: &SkeletonSpec) -> Result<MotionSequence<S>> {
    let mut label = None;
    let mut values = Vec::new();
    let mut frames = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if frames == 0 {
                if let Some(l) = parse_header(line, path, lineno)? {
                    label = Some(l);
                }
            }
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                detail: format!("malformed row: {e}"),
            })?;
        if !spec.accepts(row.len()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                detail: format!("row has {} channels, skeleton expects {:?}", row.len(), spec.input_channels),
            });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                detail: format!("non-finite value in column {}", j + 1),
            });
        }
        values.extend(spec.retained.iter().map(|&c| wrap_angle(S::of(row[c]))));
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::Data(format!("{}: no frames", path.display())));
    }
    MotionSequence::new(Array::new(vec![frames, spec.output_dim()], values)?, label)
}

fn sequence_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "jsonl"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("{}: no .csv or .jsonl files", path.display())));
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    values: Vec<f64>,
}

/// Parses json-lines frames `{"frame": i, "values": [...]}` in order.
pub fn parse_sequence_jsonl<S: Scalar>(text: &str, path: &Path, spec: &SkeletonSpec) -> Result<MotionSequence<S>> {
    let mut label = None;
    let mut values = Vec::new();
    let mut frames = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            detail,
        };
        let rec: FrameRecord = serde_json::from_str(raw).map_err(|e| bad(format!("malformed record: {e}")))?;
        if rec.frame != frames {
            return Err(bad(format!("frame index {} out of order, expected {frames}", rec.frame)));
        }
        if !spec.accepts(rec.values.len()) {
            return Err(bad(format!("record has {} channels, skeleton expects {:?}", rec.values.len(), spec.input_channels)));
        }
        if rec.values.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        if label.is_none() {
            label = rec.label;
        }
        values.extend(spec.retained.iter().map(|&c| wrap_angle(S::of(rec.values[c]))));
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::Data(format!("{}: no frames", path.display())));
    }
    MotionSequence::new(Array::new(vec![frames, spec.output_dim()], values)?, label)
}

/// One json record per frame; the label rides on frame 0.
pub fn sequence_to_jsonl<S: Scalar>(seq: &MotionSequence<S>) -> Result<String> {
    let mut out = String::new();
    for t in 0..seq.len() {
        let rec = FrameRecord {
            frame: t,
            label: if t == 0 { seq.label.clone() } else { None },
            values: seq.frame(t).iter().map(|v| v.as_f64()).collect(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// Loads one file or every `.csv` in a directory (sorted by name).
/// Sequences shorter than `min_len` are dropped and counted.
pub fn load_sequences<S: Scalar>(path: &Path, spec: &SkeletonSpec, min_len: usize) -> Result<LoadReport<S>> {
    let mut sequences = Vec::new();
    let mut discarded = 0;
    for file in sequence_files(path)? {
        let text = fs::read_to_string(&file)
            .map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
        let seq = if file.extension().is_some_and(|x| x == "jsonl") {
            parse_sequence_jsonl(&text, &file, spec)?
        } else {
            parse_sequence(&text, &file, spec)?
        };
        if seq.len() < min_len {
            discarded += 1;
        } else {
            sequences.push(seq);
        }
    }
    if discarded > 0 {
        log::warn!("discarded {discarded} sequences shorter than {min_len} frames");
    }
    Ok(LoadReport { sequences, discarded })
}

/// CSV rendering that [`parse_sequence`] reads back exactly.
pub fn sequence_to_csv<S: Scalar>(seq: &MotionSequence<S>) -> String {
    let mut out = String::new();
    match &seq.label {
        Some(l) => {
            let _ = writeln!(out, "# label={l} fps={FRAME_RATE}");
        }
        None => {
            let _ = writeln!(out, "# fps={FRAME_RATE}");
        }
    }
    for t in 0..seq.len() {
        let row: Vec<String> = seq.frame(t).iter().map(|v| format_value(v.as_f64())).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parameters of the synthetic sinusoidal motion family.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub channels: usize,
    pub categories: usize,
    /// Base frequency of category 0 in Hz; category `c` uses
    /// `base_hz + c * step_hz`.
    pub base_hz: f64,
    pub step_hz: f64,
    /// Seed of the fixed per-channel amplitudes and phases.
    pub shape_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            channels: POSE_DIM,
            categories: 5,
            base_hz: 0.4,
            step_hz: 0.3,
            shape_seed: 0x5eed,
        }
    }
}

impl SynthSpec {
    pub fn omega(&self, category: usize) -> f64 {
        2.0 * PI * (self.base_hz + category as f64 * self.step_hz) / FRAME_RATE as f64
    }

    /// `(a_i, phi_i)` per channel; identical for every sequence.
    pub fn channel_shape(&self) -> Vec<(f64, f64)> {
        let mut rng = RandomSource::new(self.shape_seed);
        (0..self.channels)
            .map(|_| (rng.uniform_in(0.2, 0.8), rng.uniform_in(-PI, PI)))
            .collect()
    }

    pub fn label(category: usize) -> String {
        format!("cat{category}")
    }
}

/// `a_i sin(w_c (t + t0) + phi_i) + noise * eps`, with a random start `t0`
/// within one period drawn from `rng`.
pub fn synth_motion<S: Scalar>(
    spec: &SynthSpec,
    category: usize,
    length: usize,
    noise: f64,
    rng: &mut RandomSource,
) -> Result<MotionSequence<S>> {
    if length == 0 {
        return Err(Error::Invalid("synthetic length must be >= 1".into()));
    }
    if category >= spec.categories {
        return Err(Error::Invalid(format!(
            "category {category} out of range 0..{}",
            spec.categories
        )));
    }
    let w = spec.omega(category);
    let t0 = rng.uniform_in(0.0, 2.0 * PI / w);
    let shape = spec.channel_shape();
    let mut values = Vec::with_capacity(length * spec.channels);
    for t in 0..length {
        for &(a, phi) in &shape {
            let mut v = a * (w * (t as f64 + t0) + phi).sin();
            if noise > 0.0 {
                v += noise * rng.normal();
            }
            values.push(wrap_angle(S::of(v)));
        }
    }
    MotionSequence::new(
        Array::new(vec![length, spec.channels], values)?,
        Some(SynthSpec::label(category)),
    )
}

/// `per_category` sequences of each category, category-major order.
pub fn synthetic_dataset<S: Scalar>(
    spec: &SynthSpec,
    per_category: usize,
    length: usize,
    noise: f64,
    rng: &mut RandomSource,
) -> Result<Vec<MotionSequence<S>>> {
    let mut out = Vec::with_capacity(spec.categories * per_category);
    for c in 0..spec.categories {
        for _ in 0..per_category {
            out.push(synth_motion(spec, c, length, noise, rng)?);
        }
    }
    Ok(out)
}

/// Contiguous training window: `past` frames followed by `future` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetWindow<S> {
    pub past: MotionSequence<S>,
    pub future: MotionSequence<S>,
    pub label: Option<String>,
    pub source: usize,
    pub start: usize,
}

impl<S: Scalar> DatasetWindow<S> {
    pub fn full(&self) -> Result<MotionSequence<S>> {
        self.past.concat(&self.future)
    }
}

/// Draws fixed-size batches of windows with uniformly random placement
/// over all admissible `(sequence, start)` pairs.
#[derive(Clone, Debug)]
pub struct WindowSampler<'a, S> {
    sequences: &'a [MotionSequence<S>],
    past_len: usize,
    future_len: usize,
    batch_size: usize,
    /// Cumulative count of admissible starts per sequence.
    cumulative: Vec<usize>,
    rng: RandomSource,
}

impl<'a, S: Scalar> WindowSampler<'a, S> {
    pub fn new(
        sequences: &'a [MotionSequence<S>],
        past_len: usize,
        future_len: usize,
        batch_size: usize,
        rng: RandomSource,
    ) -> Result<Self> {
        if past_len == 0 || future_len == 0 || batch_size == 0 {
            return Err(Error::Invalid("window lengths and batch size must be positive".into()));
        }
        let len = past_len + future_len;
        let mut cumulative = Vec::with_capacity(sequences.len());
        let mut total = 0;
        for s in sequences {
            total += (s.len() + 1).saturating_sub(len);
            cumulative.push(total);
        }
        if total == 0 {
            return Err(Error::Data(format!("no sequence has the {len} frames a window needs")));
        }
        Ok(Self {
            sequences,
            past_len,
            future_len,
            batch_size,
            cumulative,
            rng,
        })
    }

    pub fn window_len(&self) -> usize {
        self.past_len + self.future_len
    }

    pub fn num_windows(&self) -> usize {
        *self.cumulative.last().unwrap_or(&0)
    }

    fn locate(&self, k: usize) -> (usize, usize) {
        let s = self.cumulative.partition_point(|&c| c <= k);
        let before = if s == 0 { 0 } else { self.cumulative[s - 1] };
        (s, k - before)
    }

    pub fn window_at(&self, source: usize, start: usize) -> Result<DatasetWindow<S>> {
        let seq = &self.sequences[source];
        Ok(DatasetWindow {
            past: seq.window(start, self.past_len)?,
            future: seq.window(start + self.past_len, self.future_len)?,
            label: seq.label.clone(),
            source,
            start,
        })
    }

    pub fn next_batch(&mut self) -> Result<Vec<DatasetWindow<S>>> {
        let total = self.num_windows();
        (0..self.batch_size)
            .map(|_| {
                let k = self.rng.below(total);
                let (s, start) = self.locate(k);
                self.window_at(s, start)
            })
            .collect()
    }
}

/// Stacks equally long sequences into per-time-step `[batch, dim]` arrays.
pub fn stack_time<S: Scalar>(seqs: &[&MotionSequence<S>]) -> Result<Vec<Array<S>>> {
    let first = seqs.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (len, dim) = (first.len(), first.dim());
    if seqs.iter().any(|s| s.len() != len || s.dim() != dim) {
        return Err(Error::Invalid("batch sequences differ in shape".into()));
    }
    (0..len)
        .map(|t| {
            let mut v = Vec::with_capacity(seqs.len() * dim);
            for s in seqs {
                v.extend_from_slice(s.frame(t));
            }
            Array::new(vec![seqs.len(), dim], v)
        })
        .collect()
}

/// Inverse of [`stack_time`] for row `b`.
pub fn unstack_item<S: Scalar>(steps: &[Array<S>], b: usize, label: Option<String>) -> Result<MotionSequence<S>> {
    let rows: Vec<Vec<S>> = steps.iter().map(|a| a.row(b).to_vec()).collect();
    MotionSequence::from_frames(&rows, label)
}

/// Pools all frames of `seqs` as `[frames, dim]`.
pub fn pool_frames<S: Scalar>(seqs: &[MotionSequence<S>]) -> Result<Array<S>> {
    let first = seqs.first().ok_or_else(|| Error::Data("no sequences".into()))?;
    let dim = first.dim();
    let mut values = Vec::new();
    let mut n = 0;
    for s in seqs {
        if s.dim() != dim {
            return Err(Error::Data("sequences differ in frame dim".into()));
        }
        values.extend_from_slice(s.frames().values());
        n += s.len();
    }
    Array::new(vec![n, dim], values)
}

/// Per-label counts, mostly for logging.
pub fn label_counts<S>(seqs: &[MotionSequence<S>]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for s in seqs {
        *m.entry(s.label.clone().unwrap_or_default()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path() -> PathBuf {
        PathBuf::from("fixture.csv")
    }

    #[test]
    fn human36m_keeps_54_of_62() {
        let spec = SkeletonSpec::human36m();
        let total: usize = spec.joints.iter().map(|j| j.1).sum();
        assert_eq!(total, 62);
        assert_eq!(spec.output_dim(), 54);
        assert_eq!(spec.dropped().len(), 8);
        let mut text = String::from("# label=walking fps=25\n");
        for t in 0..100 {
            let row: Vec<String> = (0..62).map(|c| format!("{}", 0.001 * (t * 62 + c) as f64)).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let seq: MotionSequence<f64> = parse_sequence(&text, &path(), &spec).unwrap();
        assert_eq!((seq.len(), seq.dim()), (100, 54));
        assert_eq!(seq.label.as_deref(), Some("walking"));
        assert_eq!(seq.frame(0)[0], 0.006);
    }

    #[test]
    fn three_line_fixture() {
        let text = "0.1,0.2,-0.3\n1.5,-2.5,3.0\n0,0,1e-3\n";
        let seq: MotionSequence<f64> = parse_sequence(text, &path(), &SkeletonSpec::passthrough(3)).unwrap();
        let expect = Array::from_rows(&[vec![0.1, 0.2, -0.3], vec![1.5, -2.5, 3.0], vec![0.0, 0.0, 1e-3]]).unwrap();
        assert_eq!(seq.frames(), &expect);
        assert_eq!(seq.label, None);
    }

    #[test]
    fn wraps_on_ingest() {
        let seq: MotionSequence<f64> = parse_sequence("4.0\n", &path(), &SkeletonSpec::passthrough(1)).unwrap();
        assert!((seq.frame(0)[0] - (4.0 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn malformed_row_names_line() {
        let err = parse_sequence::<f64>("# fps=25\n0.1,0.2\n0.1,abc\n", &path(), &SkeletonSpec::passthrough(2)).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
        let err = parse_sequence::<f64>("0.1,0.2\n0.1\n", &path(), &SkeletonSpec::passthrough(2)).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn empty_and_bad_fps_fail() {
        assert!(parse_sequence::<f64>("", &path(), &SkeletonSpec::passthrough(2)).is_err());
        assert!(parse_sequence::<f64>("# fps=25\n", &path(), &SkeletonSpec::passthrough(2)).is_err());
        let err = parse_sequence::<f64>("# fps=50\n0,0\n", &path(), &SkeletonSpec::passthrough(2)).unwrap_err();
        assert!(err.to_string().contains("fps"));
    }

    #[test]
    fn spec_file_parsing() {
        let s = SkeletonSpec::parse("# retained\n0, 2\n5\n", &path()).unwrap();
        assert_eq!(s.retained, vec![0, 2, 5]);
        assert!(SkeletonSpec::parse("1\n1\n", &path()).is_err());
        assert!(SkeletonSpec::parse("x\n", &path()).is_err());
        let seq: MotionSequence<f64> = parse_sequence("1,2,3,4,5,6\n", &path(), &s).unwrap();
        assert_eq!(seq.frame(0), &[1.0, 3.0, 6.0 - 2.0 * PI]);
    }

    #[test]
    fn directory_loading_discards_short() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { channels: 3, ..SynthSpec::default() };
        let mut rng = RandomSource::new(1);
        for (i, len) in [(0, 30), (1, 5), (2, 40)] {
            let s: MotionSequence<f64> = synth_motion(&spec, i, len, 0.0, &mut rng).unwrap();
            fs::write(dir.path().join(format!("s{i}.csv")), sequence_to_csv(&s)).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let r = load_sequences::<f64>(dir.path(), &SkeletonSpec::passthrough(3), 20).unwrap();
        assert_eq!(r.sequences.len(), 2);
        assert_eq!(r.discarded, 1);
        assert_eq!(r.sequences[1].label.as_deref(), Some("cat2"));
    }

    #[test]
    fn synth_is_deterministic_and_bounded() {
        let spec = SynthSpec::default();
        let a: MotionSequence<f64> = synth_motion(&spec, 2, 50, 0.0, &mut RandomSource::new(9)).unwrap();
        let b: MotionSequence<f64> = synth_motion(&spec, 2, 50, 0.0, &mut RandomSource::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 54);
        let shape = spec.channel_shape();
        let noise = 0.05;
        let n: MotionSequence<f64> = synth_motion(&spec, 0, 400, noise, &mut RandomSource::new(3)).unwrap();
        let mut inside = 0;
        for t in 0..n.len() {
            for (c, v) in n.frame(t).iter().enumerate() {
                if v.abs() <= shape[c].0 + 3.0 * noise {
                    inside += 1;
                }
            }
        }
        let frac = inside as f64 / (n.len() * n.dim()) as f64;
        assert!(frac > 0.994, "{frac}");
        let freqs: Vec<f64> = (0..5).map(|c| spec.omega(c)).collect();
        assert!(freqs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn default_window_geometry() {
        let spec = SynthSpec::default();
        let mut rng = RandomSource::new(0);
        let seqs: Vec<MotionSequence<f64>> = synthetic_dataset(&spec, 2, 120, 0.0, &mut rng).unwrap();
        let mut s = WindowSampler::new(&seqs, 50, 2 * 25, 32, RandomSource::new(4)).unwrap();
        assert_eq!(s.window_len(), 100);
        assert_eq!(s.num_windows(), 10 * 21);
        let batch = s.next_batch().unwrap();
        assert_eq!(batch.len(), 32);
        for w in &batch {
            let src = &seqs[w.source];
            assert_eq!(w.full().unwrap(), src.window(w.start, 100).unwrap());
            assert_eq!(w.label, src.label);
        }
        let mut again = WindowSampler::new(&seqs, 50, 50, 32, RandomSource::new(4)).unwrap();
        let starts: Vec<_> = again.next_batch().unwrap().iter().map(|w| (w.source, w.start)).collect();
        assert_eq!(starts, batch.iter().map(|w| (w.source, w.start)).collect::<Vec<_>>());
    }

    #[test]
    fn no_eligible_sequence() {
        let seqs: Vec<MotionSequence<f64>> = vec![MotionSequence::from_frames(&[vec![0.0]], None).unwrap()];
        assert!(WindowSampler::new(&seqs, 2, 2, 1, RandomSource::new(0)).is_err());
    }

    #[test]
    fn stack_round_trip() {
        let a = MotionSequence::<f64>::from_frames(&[vec![1.0, 2.0], vec![3.0, 4.0]], None).unwrap();
        let b = MotionSequence::<f64>::from_frames(&[vec![5.0, 6.0], vec![7.0, 8.0]], None).unwrap();
        let st = stack_time(&[&a, &b]).unwrap();
        assert_eq!(st[1].values(), &[3.0, 4.0, 7.0, 8.0]);
        assert_eq!(unstack_item(&st, 1, None).unwrap(), b);
    }

    #[test]
    fn label_map_is_sorted() {
        let m = LabelMap::from_names(vec!["walk".into(), "eat".into(), "walk".into()]);
        assert_eq!(m.len(), 2);
        assert_eq!(m.id("walk"), Some(1));
        assert_eq!(m.name(0), Some("eat"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn windows_stay_inside_sources(seed in 0u64..500, lens in proptest::collection::vec(5usize..40, 1..5)) {
            let spec = SynthSpec { channels: 2, ..SynthSpec::default() };
            let mut rng = RandomSource::new(seed);
            let seqs: Vec<MotionSequence<f64>> = lens.iter().enumerate()
                .map(|(i, &l)| synth_motion(&spec, i % 5, l, 0.0, &mut rng).unwrap())
                .collect();
            if let Ok(mut s) = WindowSampler::new(&seqs, 3, 4, 8, RandomSource::new(seed)) {
                for w in s.next_batch().unwrap() {
                    prop_assert!(w.start + 7 <= seqs[w.source].len());
                    prop_assert_eq!(w.full().unwrap(), seqs[w.source].window(w.start, 7).unwrap());
                }
            } else {
                prop_assert!(lens.iter().all(|&l| l < 7));
            }
        }

        #[test]
        fn csv_round_trip_exact(vals in proptest::collection::vec(-3.1f64..3.1, 6)) {
            let seq = MotionSequence::<f64>::from_frames(&[vals[..3].to_vec(), vals[3..].to_vec()], Some("x".into())).unwrap();
            let back: MotionSequence<f64> = parse_sequence(&sequence_to_csv(&seq), &path(), &SkeletonSpec::passthrough(3)).unwrap();
            prop_assert_eq!(back, seq);
        }
    }
}
