//! Deterministic translating test sequences with a flickering patch, and the residual-energy
//! comparison between plain frame differencing and motion-compensated differencing.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::flow::{horn_schunck, FlowParams};
use crate::rng::Pcg32;
use crate::tensor::{FlowField, Tensor4};
use crate::warp::{reconstruct_frame, residual};

pub const ENERGY_EPS: f64 = 1e-12;
const CHANNELS: usize = 3;

/// Background components: (cycles per frame width, amplitude, orientation in radians).
pub const BACKGROUND_WAVES: [(f64, f64, f64); 3] = [(2.0, 0.3, 0.5), (5.0, 0.15, 2.1), (11.0, 0.05, 1.2)];

/// Stream used for the background phases; flicker uses stream `t` for frame `t`.
const PHASE_STREAM: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Rect { x0, y0, w, h }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.w && y >= self.y0 && y < self.y0 + self.h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Pixels per frame.
    pub velocity: (f64, f64),
    pub perturb_rect: Rect,
    pub perturb_amp: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            width: 64,
            height: 64,
            frames: 8,
            velocity: (2.0, 0.0),
            perturb_rect: Rect::new(24, 24, 16, 16),
            perturb_amp: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::param(format!(
                "frame size must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if self.frames < 2 {
            return Err(Error::param("need at least 2 frames"));
        }
        if !(self.velocity.0.is_finite() && self.velocity.1.is_finite()) {
            return Err(Error::param("velocity must be finite"));
        }
        if !(0.0..=1.0).contains(&self.perturb_amp) {
            return Err(Error::param(format!("perturbation amplitude {} outside [0, 1]", self.perturb_amp)));
        }
        let r = self.perturb_rect;
        if r.x0 + r.w > self.width || r.y0 + r.h > self.height {
            return Err(Error::param(format!("perturbation rect {r:?} leaves the frame")));
        }
        Ok(())
    }

    /// Width of the border excluded from energy statistics: `ceil(max |v|) + 1`.
    pub fn border(&self) -> usize {
        self.velocity.0.abs().max(self.velocity.1.abs()).ceil() as usize + 1
    }

    pub fn true_flow(&self) -> FlowField {
        FlowField::uniform(
            1,
            self.height,
            self.width,
            self.velocity.0 as f32,
            self.velocity.1 as f32,
        )
    }
}

struct Background {
    width: f64,
    phases: [f64; 3],
}

impl Background {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = Pcg32::new(spec.seed, PHASE_STREAM);
        Background {
            width: spec.width as f64,
            phases: std::array::from_fn(|_| rng.uniform(0.0, TAU)),
        }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.5;
        for ((freq, amp, theta), phase) in BACKGROUND_WAVES.iter().zip(self.phases) {
            let along = x * theta.cos() + y * theta.sin();
            v += amp * (TAU * freq * along / self.width + phase).sin();
        }
        v
    }
}

/// Renders the sequence. Frame `t` samples the background at `(x + t*vx, y + t*vy)`, so the
/// constant ground-truth field is the velocity itself; the rect gets per-frame uniform flicker.
pub fn gen_sequence(spec: &SyntheticSpec) -> Result<(Vec<Tensor4>, FlowField)> {
    spec.validate()?;
    let bg = Background::new(spec);
    let (w, h) = (spec.width, spec.height);
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let (ox, oy) = (t as f64 * spec.velocity.0, t as f64 * spec.velocity.1);
        let mut base = vec![0f64; w * h];
        for y in 0..h {
            for x in 0..w {
                base[y * w + x] = bg.sample(x as f64 + ox, y as f64 + oy);
            }
        }
        let mut frame = Tensor4::from_fn([1, CHANNELS, h, w], |_, _, y, x| base[y * w + x] as f32);
        let r = spec.perturb_rect;
        let mut rng = Pcg32::new(spec.seed, t as u64);
        for y in r.y0..r.y0 + r.h {
            for x in r.x0..r.x0 + r.w {
                for c in 0..CHANNELS {
                    let noise = spec.perturb_amp * rng.uniform(-1.0, 1.0);
                    frame.set(0, c, y, x, (base[y * w + x] + noise) as f32);
                }
            }
        }
        for v in frame.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        frames.push(frame);
    }
    Ok((frames, spec.true_flow()))
}

/// Mean-square residual inside and outside the rect, ignoring a border of `border` pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegionEnergy {
    pub inside: f64,
    pub outside: f64,
}

impl RegionEnergy {
    pub fn ratio(&self) -> f64 {
        self.inside / (self.outside + ENERGY_EPS)
    }
}

pub fn region_energy(res: &Tensor4, rect: Rect, border: usize) -> Result<RegionEnergy> {
    let d = res.dims();
    if rect.w == 0 || rect.h == 0 {
        return Err(Error::param(format!("degenerate rect {rect:?}")));
    }
    let (mut sin, mut nin, mut sout, mut nout) = (0f64, 0usize, 0f64, 0usize);
    for b in 0..d.b {
        for c in 0..d.c {
            for y in border..d.h.saturating_sub(border) {
                for x in border..d.w.saturating_sub(border) {
                    let v = res.get(b, c, y, x) as f64;
                    if rect.contains(x, y) {
                        sin += v * v;
                        nin += 1;
                    } else {
                        sout += v * v;
                        nout += 1;
                    }
                }
            }
        }
    }
    if nin == 0 {
        return Err(Error::param(format!(
            "rect {rect:?} has no pixels inside the {border}px border of a {}x{} frame",
            d.w, d.h
        )));
    }
    Ok(RegionEnergy {
        inside: sin / nin as f64,
        outside: if nout == 0 { 0.0 } else { sout / nout as f64 },
    })
}

/// Inside/outside mean-square ratio, averaged over the residual frames.
pub fn energy_ratio(residuals: &[Tensor4], rect: Rect, border: usize) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::param("no residual frames"));
    }
    let mut sum = 0.0;
    for r in residuals {
        sum += region_energy(r, rect, border)?.ratio();
    }
    Ok(sum / residuals.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairEnergy {
    pub plain: RegionEnergy,
    pub compensated_true: RegionEnergy,
    pub compensated_estimated: RegionEnergy,
    /// Mean estimated `(u, v)` over the analysed region.
    pub estimated_mean_flow: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub ratio_plain: f64,
    pub ratio_compensated_true: f64,
    pub ratio_compensated_estimated: f64,
    pub border: usize,
    pub pairs: Vec<PairEnergy>,
}

impl EnergyReport {
    /// Line-oriented `key=value` rendering.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("pairs={}\n", self.pairs.len()));
        s.push_str(&format!("border={}\n", self.border));
        s.push_str(&format!("ratio_plain={:.9e}\n", self.ratio_plain));
        s.push_str(&format!("ratio_compensated_true={:.9e}\n", self.ratio_compensated_true));
        s.push_str(&format!("ratio_compensated_estimated={:.9e}\n", self.ratio_compensated_estimated));
        for (t, p) in self.pairs.iter().enumerate() {
            for (name, e) in [
                ("plain", p.plain),
                ("compensated_true", p.compensated_true),
                ("compensated_estimated", p.compensated_estimated),
            ] {
                s.push_str(&format!("pair{t}.{name}.inside={:.9e}\n", e.inside));
                s.push_str(&format!("pair{t}.{name}.outside={:.9e}\n", e.outside));
            }
            s.push_str(&format!("pair{t}.estimated_mean_u={:.6}\n", p.estimated_mean_flow.0));
            s.push_str(&format!("pair{t}.estimated_mean_v={:.6}\n", p.estimated_mean_flow.1));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,variant,inside,outside,ratio\n");
        for (t, p) in self.pairs.iter().enumerate() {
            for (name, e) in [
                ("plain", p.plain),
                ("compensated_true", p.compensated_true),
                ("compensated_estimated", p.compensated_estimated),
            ] {
                s.push_str(&format!("{t},{name},{:.9e},{:.9e},{:.9e}\n", e.inside, e.outside, e.ratio()));
            }
        }
        s
    }
}

fn mean_flow(flow: &FlowField, border: usize) -> (f64, f64) {
    let d = flow.dims();
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
    for y in border..d.h.saturating_sub(border) {
        for x in border..d.w.saturating_sub(border) {
            su += flow.u(0, y, x) as f64;
            sv += flow.v(0, y, x) as f64;
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    (su / n, sv / n)
}

/// Compares plain differencing against compensation with the true and the estimated flow.
pub fn run_experiment(spec: &SyntheticSpec, flow_params: &FlowParams) -> Result<EnergyReport> {
    let (frames, truth) = gen_sequence(spec)?;
    let rect = spec.perturb_rect;
    let border = spec.border();
    let mut pairs = Vec::with_capacity(frames.len() - 1);
    for pair in frames.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let plain = residual(next, prev)?;
        let comp_true = residual(&reconstruct_frame(prev, &truth)?, next)?;
        let est = horn_schunck(prev, next, flow_params)?;
        let comp_est = residual(&reconstruct_frame(prev, &est)?, next)?;
        pairs.push(PairEnergy {
            plain: region_energy(&plain, rect, border)?,
            compensated_true: region_energy(&comp_true, rect, border)?,
            compensated_estimated: region_energy(&comp_est, rect, border)?,
            estimated_mean_flow: mean_flow(&est, border),
        });
    }
    let n = pairs.len() as f64;
    let avg = |f: fn(&PairEnergy) -> RegionEnergy| pairs.iter().map(|p| f(p).ratio()).sum::<f64>() / n;
    Ok(EnergyReport {
        ratio_plain: avg(|p| p.plain),
        ratio_compensated_true: avg(|p| p.compensated_true),
        ratio_compensated_estimated: avg(|p| p.compensated_estimated),
        border,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_scene_is_constant() {
        let spec = SyntheticSpec {
            velocity: (0.0, 0.0),
            perturb_amp: 0.0,
            ..Default::default()
        };
        let (frames, _) = gen_sequence(&spec).unwrap();
        assert!(frames.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn seeded_sequences_repeat() {
        let spec = SyntheticSpec::default();
        assert_eq!(gen_sequence(&spec).unwrap(), gen_sequence(&spec).unwrap());
        let other = SyntheticSpec { seed: 8, ..spec.clone() };
        assert_ne!(gen_sequence(&spec).unwrap().0, gen_sequence(&other).unwrap().0);
    }

    #[test]
    fn integer_velocity_is_an_exact_shift() {
        let spec = SyntheticSpec {
            perturb_amp: 0.0,
            ..Default::default()
        };
        let (frames, _) = gen_sequence(&spec).unwrap();
        for t in 0..frames.len() - 1 {
            for c in 0..3 {
                for y in 0..64 {
                    for x in 0..62 {
                        assert_eq!(frames[t + 1].get(0, c, y, x), frames[t].get(0, c, y, x + 2));
                    }
                }
            }
        }
    }

    #[test]
    fn values_stay_in_unit_range() {
        let spec = SyntheticSpec {
            perturb_amp: 1.0,
            ..Default::default()
        };
        let (frames, _) = gen_sequence(&spec).unwrap();
        assert!(frames.iter().all(|f| f.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn invalid_specs() {
        let ok = SyntheticSpec::default();
        for bad in [
            SyntheticSpec { width: 8, ..ok.clone() },
            SyntheticSpec { frames: 1, ..ok.clone() },
            SyntheticSpec { perturb_rect: Rect::new(60, 0, 8, 8), ..ok.clone() },
            SyntheticSpec { perturb_amp: 1.5, ..ok.clone() },
            SyntheticSpec { velocity: (f64::NAN, 0.0), ..ok.clone() },
        ] {
            assert!(gen_sequence(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn energy_ratio_cases() {
        let rect = Rect::new(4, 4, 4, 4);
        let zero = Tensor4::zeros([1, 3, 16, 16]);
        assert_eq!(energy_ratio(std::slice::from_ref(&zero), rect, 1).unwrap(), 0.0);

        let only_inside = Tensor4::from_fn([1, 3, 16, 16], |_, _, y, x| rect.contains(x, y) as u8 as f32);
        let r = energy_ratio(&[only_inside], rect, 1).unwrap();
        assert!(r.is_finite() && r >= 1e11);

        let checker = Tensor4::from_fn([1, 3, 16, 16], |_, _, y, x| ((x + y) % 2) as f32);
        let r = energy_ratio(&[checker], rect, 1).unwrap();
        assert!((r - 1.0).abs() < 1e-6, "{r}");

        assert!(energy_ratio(std::slice::from_ref(&zero), Rect::new(4, 4, 0, 3), 1).is_err());
        assert!(energy_ratio(&[zero], Rect::new(0, 0, 2, 2), 3).is_err());
        assert!(energy_ratio(&[], rect, 1).is_err());
    }

    #[test]
    fn no_motion_means_nothing_to_compensate() {
        let spec = SyntheticSpec {
            velocity: (0.0, 0.0),
            ..Default::default()
        };
        let rep = run_experiment(&spec, &FlowParams::default()).unwrap();
        assert_eq!(rep.ratio_plain, rep.ratio_compensated_true);
        for p in &rep.pairs {
            assert_eq!(p.plain, p.compensated_true);
        }
    }

    #[test]
    fn report_renders_keys() {
        let spec = SyntheticSpec {
            frames: 3,
            ..Default::default()
        };
        let rep = run_experiment(&spec, &FlowParams { iterations: 5, ..Default::default() }).unwrap();
        let kv = rep.to_key_values();
        assert!(kv.contains("ratio_plain="));
        assert!(kv.contains("ratio_compensated_true="));
        assert!(kv.contains("pair1.plain.inside="));
        assert_eq!(rep.to_csv().lines().count(), 1 + 2 * 3);
    }
}
