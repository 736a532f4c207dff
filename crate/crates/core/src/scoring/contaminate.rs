use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal};

use crate::data::FrameSequence;
use crate::density::ContaminationSpec;
use crate::error::{invalid, Result};
use crate::rng::keyed_rng;

/// Mean length, in frames, of one noise burst.
pub const MEAN_BURST_LEN: f64 = 5.0;

/// Contaminated copy of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Contaminated {
    pub data: Vec<FrameSequence>,
    /// `mask[r][t]` is set when frame `t` of recording `r` received noise.
    pub mask: Vec<Vec<bool>>,
    /// Added noise, in mask order (recording, frame, dimension).
    pub noise: Vec<f64>,
}

impl Contaminated {
    pub fn contaminated_frames(&self) -> usize {
        self.mask.iter().flatten().filter(|m| **m).count()
    }
}

/// Adds `N(0, σ²)` noise to exactly `⌊ε · total frames⌋` frames.
///
/// Frames are chosen as bursts: a start is drawn uniformly among the frames not
/// yet hit, and the burst runs forward over untouched frames of the same
/// recording for a geometric number of frames with mean [`MEAN_BURST_LEN`].
/// The last burst is cut short to land exactly on the budget.
pub fn inject_noise_bursts(data: &[FrameSequence], spec: &ContaminationSpec, seed: u64) -> Result<Contaminated> {
    let spec = ContaminationSpec::new(spec.epsilon, spec.sigma2)?;
    let lens: Vec<usize> = data.iter().map(FrameSequence::frames).collect();
    let total: usize = lens.iter().sum();
    let budget = (spec.epsilon * total as f64).floor() as usize;
    let mut mask: Vec<Vec<bool>> = lens.iter().map(|&t| vec![false; t]).collect();

    let mut rng = keyed_rng(seed, "contaminate/bursts");
    let burst = Geometric::new(1.0 / MEAN_BURST_LEN).map_err(|e| invalid(e.to_string()))?;
    let mut hit = 0;
    while hit < budget {
        let mut k = rng.random_range(0..total - hit);
        let (mut r, mut t) = (0, 0);
        'find: for (ri, m) in mask.iter().enumerate() {
            for (ti, &set) in m.iter().enumerate() {
                if !set {
                    if k == 0 {
                        (r, t) = (ri, ti);
                        break 'find;
                    }
                    k -= 1;
                }
            }
        }
        let mut len = 1 + burst.sample(&mut rng) as usize;
        while len > 0 && hit < budget && t < lens[r] {
            if !mask[r][t] {
                mask[r][t] = true;
                hit += 1;
                len -= 1;
            }
            t += 1;
        }
    }

    let mut noise_rng = keyed_rng(seed, "contaminate/noise");
    let normal = Normal::new(0.0, spec.sigma2.sqrt()).map_err(|e| invalid(e.to_string()))?;
    let mut noise = Vec::new();
    let mut out = Vec::with_capacity(data.len());
    for (seq, m) in data.iter().zip(&mask) {
        let p = seq.dims();
        let mut values = seq.values().to_vec();
        for (t, _) in m.iter().enumerate().filter(|(_, set)| **set) {
            for v in &mut values[t * p..(t + 1) * p] {
                let e = normal.sample(&mut noise_rng);
                *v += e;
                noise.push(e);
            }
        }
        out.push(seq.with_values(values)?);
    }
    Ok(Contaminated { data: out, mask, noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;

    fn data(n: usize, frames: usize) -> Vec<FrameSequence> {
        (0..n)
            .map(|i| {
                let v = (0..frames * 2).map(|k| (k as f64 * 0.01 + i as f64).sin()).collect();
                FrameSequence::new(format!("r{i}"), "m", Label::Normal, frames, 2, v).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let d = data(3, 50);
        let c = inject_noise_bursts(&d, &ContaminationSpec::new(0.0, 5.0).unwrap(), 1).unwrap();
        assert_eq!(c.data, d);
        assert_eq!(c.contaminated_frames(), 0);
    }

    #[test]
    fn exact_budget() {
        let d = data(10, 100);
        let c = inject_noise_bursts(&d, &ContaminationSpec::default(), 4).unwrap();
        assert_eq!(c.contaminated_frames(), 100);
        let all = inject_noise_bursts(&d, &ContaminationSpec::new(1.0, 5.0).unwrap(), 4).unwrap();
        assert_eq!(all.contaminated_frames(), 1000);
    }

    #[test]
    fn only_masked_frames_change() {
        let d = data(4, 60);
        let c = inject_noise_bursts(&d, &ContaminationSpec::new(0.3, 2.0).unwrap(), 9).unwrap();
        for ((orig, new), m) in d.iter().zip(&c.data).zip(&c.mask) {
            for t in 0..orig.frames() {
                assert_eq!(orig.row(t) != new.row(t), m[t]);
            }
        }
    }

    #[test]
    fn bursts_are_runs() {
        let d = data(20, 500);
        let c = inject_noise_bursts(&d, &ContaminationSpec::default(), 2).unwrap();
        let frames = c.contaminated_frames();
        let runs: usize = c.mask.iter().map(|m| m.windows(2).filter(|w| w[1] && !w[0]).count() + m[0] as usize).sum();
        let mean = frames as f64 / runs as f64;
        // merged neighbours only lengthen runs
        assert!(mean > 3.5 && mean < 8.0, "mean run length {mean}");
    }

    #[test]
    fn seeded_determinism() {
        let d = data(5, 80);
        let a = inject_noise_bursts(&d, &ContaminationSpec::default(), 3).unwrap();
        assert_eq!(a, inject_noise_bursts(&d, &ContaminationSpec::default(), 3).unwrap());
        assert_ne!(a.mask, inject_noise_bursts(&d, &ContaminationSpec::default(), 4).unwrap().mask);
    }
}
