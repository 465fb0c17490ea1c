//! Labeled feasibility samples: generation, the dataset file, statistics
//! and train/test splitting.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::oracle::{label_all, FeasibilityLabel};
use crate::render::{render_observation, CompactObservation, Target, CHANNEL_LEN};
use crate::world::{sample_scene_with, stream_rng, GraspDirection, SampleParams, Scene, WorldError};

pub const MAGIC: &[u8; 4] = b"NFCD";
pub const VERSION: u32 = 1;
pub const DEFAULT_COUNT: usize = 120_000;
/// Id of the body whose feasibility each sample records.
pub const TARGET_ID: &str = "target";
const SAMPLE_FLOATS: usize = 2 * CHANNEL_LEN + 3;
const SAMPLE_BYTES: usize = SAMPLE_FLOATS * 4 + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observation: CompactObservation,
    pub label: FeasibilityLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub n: usize,
    pub overall_feasible_rate: f64,
    pub per_direction_rates: [f64; 5],
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("sample {index}: {source}")]
    Sampling {
        index: u64,
        #[source]
        source: WorldError,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    VersionMismatch(u32),
    #[error("dataset file is truncated")]
    TruncatedFile,
    #[error("malformed seed sidecar: {0}")]
    BadSidecar(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Rayon pool sized by `TAMPKIT_THREADS` when set.
pub fn thread_pool() -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("TAMPKIT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        b = b.num_threads(n);
    }
    b.build().expect("thread pool")
}

/// The scene behind sample `index` of a run seeded with `seed`.
pub fn scene_at(seed: u64, index: u64, params: &SampleParams) -> Result<Scene, DatasetError> {
    sample_scene_with(&mut stream_rng(seed, index), params).map_err(|source| DatasetError::Sampling { index, source })
}

pub fn sample_from_scene(scene: &Scene) -> Result<Sample, WorldError> {
    let obs = render_observation(scene, Target::Body(TARGET_ID))?;
    let label = label_all(scene, TARGET_ID)?;
    Ok(Sample {
        observation: CompactObservation::encode(&obs),
        label,
    })
}

pub fn sample_at(seed: u64, index: u64, params: &SampleParams) -> Result<Sample, DatasetError> {
    let scene = scene_at(seed, index, params)?;
    sample_from_scene(&scene).map_err(|source| DatasetError::Sampling { index, source })
}

/// `n` samples, sample `i` drawn from its own stream `(seed, i)`, so the
/// result does not depend on the thread count.
pub fn generate(n: usize, seed: u64, params: &SampleParams) -> Result<Vec<Sample>, DatasetError> {
    params.check().map_err(|source| DatasetError::Sampling { index: 0, source })?;
    thread_pool().install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| sample_at(seed, i, params))
            .collect()
    })
}

pub fn stats(samples: &[Sample]) -> Result<DatasetStats, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut counts = [0usize; 5];
    for s in samples {
        for (k, c) in counts.iter_mut().enumerate() {
            *c += s.label.0[k] as usize;
        }
    }
    let n = samples.len();
    Ok(DatasetStats {
        n,
        overall_feasible_rate: counts.iter().sum::<usize>() as f64 / (5 * n) as f64,
        per_direction_rates: counts.map(|c| c as f64 / n as f64),
    })
}

/// Positive-class loss weights `(1 - rate) / rate` per direction. A
/// direction with no feasible sample is treated as having one.
pub fn auto_weights(stats: &DatasetStats) -> [f32; 5] {
    let floor = 1.0 / stats.n.max(1) as f64;
    stats
        .per_direction_rates
        .map(|r| ((1.0 - r.max(floor).min(1.0)) / r.max(floor)).max(1e-3) as f32)
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n={} feasible={:.4}", self.n, self.overall_feasible_rate)?;
        for d in GraspDirection::ALL {
            write!(f, " {}={:.4}", d, self.per_direction_rates[d.index()])?;
        }
        Ok(())
    }
}

/// Seeded shuffle, then the first `round(n * fraction)` go to training.
pub fn split(samples: Vec<Sample>, fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>), DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::BadFraction(fraction));
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0x53504C));
    let n_train = ((n as f64 * fraction).round() as usize).min(n);
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |i: usize| slots[i].take().expect("each index used once");
    let train = order[..n_train].iter().map(|&i| take(i)).collect();
    let test = order[n_train..].iter().map(|&i| take(i)).collect();
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// File format.

pub fn write_dataset(mut w: impl Write, samples: &[Sample]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    let mut dense = vec![0.0f32; 2 * CHANNEL_LEN];
    let mut buf = Vec::with_capacity(SAMPLE_BYTES);
    for s in samples {
        s.observation.decode_into(&mut dense);
        buf.clear();
        for v in dense.iter().chain(&s.observation.feature) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(s.label.bits());
        w.write_all(&buf)?;
    }
    w.flush()
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<(), DatasetError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => DatasetError::TruncatedFile,
        _ => DatasetError::Io(e),
    })
}

pub fn read_dataset(mut r: impl Read) -> Result<Vec<Sample>, DatasetError> {
    let mut head = [0u8; 16];
    read_exact_or_truncated(&mut r, &mut head[..4])?;
    if &head[..4] != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    read_exact_or_truncated(&mut r, &mut head[4..16])?;
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(DatasetError::VersionMismatch(version));
    }
    let count = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes"));
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut buf = vec![0u8; SAMPLE_BYTES];
    let mut obs = crate::render::DepthObservation::zeros();
    for _ in 0..count {
        read_exact_or_truncated(&mut r, &mut buf)?;
        for (i, v) in obs.channels.iter_mut().enumerate() {
            *v = f32::from_le_bytes(buf[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        }
        let f = 2 * CHANNEL_LEN * 4;
        for (k, v) in obs.feature.iter_mut().enumerate() {
            *v = f32::from_le_bytes(buf[f + 4 * k..f + 4 * k + 4].try_into().expect("4 bytes"));
        }
        out.push(Sample {
            observation: CompactObservation::encode(&obs),
            label: FeasibilityLabel::from_bits(buf[SAMPLE_BYTES - 1]),
        });
    }
    Ok(out)
}

pub fn save(path: &Path, samples: &[Sample]) -> Result<(), DatasetError> {
    write_dataset(BufWriter::new(File::create(path)?), samples)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// What regenerates a dataset: the run seed and the sampler settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSidecar {
    pub seed: u64,
    pub count: u64,
    pub params: SampleParams,
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".seeds");
    PathBuf::from(s)
}

impl SeedSidecar {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = format!("seed {}\ncount {}\n", self.seed, self.count);
        match p.neighbor_count {
            Some(k) => out += &format!("neighbor_count {k}\n"),
            None => out += "neighbor_count any\n",
        }
        out += &format!("max_neighbors {}\n", p.max_neighbors);
        out += &format!("p_near {}\n", p.p_near);
        out += &format!("near_gap {} {}\n", p.near_gap.0, p.near_gap.1);
        out += &format!("window {}\n", p.window);
        out += &format!("region_angle_deg {}\n", p.region_angle_deg);
        out += &format!("region_dist {} {}\n", p.region_dist.0, p.region_dist.1);
        out += &format!("region_top_z {} {}\n", p.region_top_z.0, p.region_top_z.1);
        out += &format!("region_half {} {}\n", p.region_half.0, p.region_half.1);
        out += &format!("box_half {} {}\n", p.box_half.0, p.box_half.1);
        out += &format!("max_attempts {}\n", p.max_attempts);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DatasetError> {
        let bad = |m: String| DatasetError::BadSidecar(m);
        let mut seed = None;
        let mut count = None;
        let mut p = SampleParams::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or_default();
            let vals: Vec<&str> = it.collect();
            let num = |i: usize| -> Result<f64, DatasetError> {
                vals.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(format!("`{key}` needs a number")))
            };
            let int = |i: usize| -> Result<u64, DatasetError> {
                vals.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(format!("`{key}` needs an integer")))
            };
            match key {
                "seed" => seed = Some(int(0)?),
                "count" => count = Some(int(0)?),
                "neighbor_count" => {
                    p.neighbor_count = match vals.first() {
                        Some(&"any") => None,
                        _ => Some(int(0)? as usize),
                    }
                }
                "max_neighbors" => p.max_neighbors = int(0)? as usize,
                "p_near" => p.p_near = num(0)?,
                "near_gap" => p.near_gap = (num(0)?, num(1)?),
                "window" => p.window = num(0)?,
                "region_angle_deg" => p.region_angle_deg = num(0)?,
                "region_dist" => p.region_dist = (num(0)?, num(1)?),
                "region_top_z" => p.region_top_z = (num(0)?, num(1)?),
                "region_half" => p.region_half = (num(0)?, num(1)?),
                "box_half" => p.box_half = (num(0)?, num(1)?),
                "max_attempts" => p.max_attempts = int(0)? as usize,
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        Ok(SeedSidecar {
            seed: seed.ok_or_else(|| bad("missing seed".into()))?,
            count: count.ok_or_else(|| bad("missing count".into()))?,
            params: p,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(labels: &[u8]) -> Vec<Sample> {
        labels
            .iter()
            .map(|&b| Sample {
                observation: CompactObservation::encode(&crate::render::DepthObservation::zeros()),
                label: FeasibilityLabel::from_bits(b),
            })
            .collect()
    }

    #[test]
    fn stats_and_weights() {
        let s = stats(&toy(&[0b11111; 4])).unwrap();
        assert_eq!(s.overall_feasible_rate, 1.0);
        assert_eq!(s.per_direction_rates, [1.0; 5]);
        let s = stats(&toy(&[0b10000, 0b00001, 0, 0])).unwrap();
        assert_eq!(s.per_direction_rates, [0.25, 0.0, 0.0, 0.0, 0.25]);
        assert!((s.overall_feasible_rate - 0.1).abs() < 1e-12);
        let w = auto_weights(&s);
        assert!((w[0] - 3.0).abs() < 1e-6);
        assert!(stats(&[]).is_err());
        // The default weights follow from the reference label rates.
        let rates = DatasetStats {
            n: 1000,
            overall_feasible_rate: 0.214,
            per_direction_rates: [0.175, 0.166, 0.172, 0.177, 0.382],
        };
        let w = auto_weights(&rates);
        for (a, b) in w.iter().zip([4.7, 5.0, 4.8, 4.6, 1.6]) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn split_partitions() {
        let data: Vec<Sample> = (0..100u8).map(|i| toy(&[i % 32])[0].clone()).collect();
        let (a, b) = split(data.clone(), 0.9, 3).unwrap();
        assert_eq!((a.len(), b.len()), (90, 10));
        let (a2, _) = split(data.clone(), 0.9, 3).unwrap();
        assert_eq!(a, a2);
        let mut all: Vec<u8> = a.iter().chain(&b).map(|s| s.label.bits()).collect();
        let mut orig: Vec<u8> = data.iter().map(|s| s.label.bits()).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
        assert!(matches!(split(data, 1.0, 0), Err(DatasetError::BadFraction(_))));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let data = generate(5, 11, &SampleParams::default()).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &data).unwrap();
        assert_eq!(bytes.len(), 16 + 5 * SAMPLE_BYTES);
        let back = read_dataset(&bytes[..]).unwrap();
        assert_eq!(back, data);
        let mut again = Vec::new();
        write_dataset(&mut again, &back).unwrap();
        assert_eq!(again, bytes);

        assert!(matches!(read_dataset(&bytes[..bytes.len() - 1]), Err(DatasetError::TruncatedFile)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset(&bad[..]), Err(DatasetError::BadMagic)));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(read_dataset(&bad[..]), Err(DatasetError::VersionMismatch(9))));
    }

    #[test]
    fn samples_rederive_from_their_scene() {
        let p = SampleParams::default();
        let data = generate(20, 5, &p).unwrap();
        for (i, s) in data.iter().enumerate() {
            let scene = scene_at(5, i as u64, &p).unwrap();
            assert_eq!(&sample_from_scene(&scene).unwrap(), s);
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let sc = SeedSidecar {
            seed: 42,
            count: 10,
            params: SampleParams {
                neighbor_count: Some(2),
                p_near: 0.25,
                ..SampleParams::default()
            },
        };
        assert_eq!(SeedSidecar::from_text(&sc.to_text()).unwrap(), sc);
        assert!(SeedSidecar::from_text("count 3\n").is_err());
        assert_eq!(sidecar_path(Path::new("a/b.nfcd")), PathBuf::from("a/b.nfcd.seeds"));
    }
}
