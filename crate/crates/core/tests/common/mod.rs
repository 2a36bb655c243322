#![allow(dead_code)]

use std::collections::BTreeMap;

use dsdp::expfam_model::ExpFamSpec;
use dsdp::partition_laws::{enumerate_set_partitions, log_partition_mass, MarkedHyper, Partition, QMode};
use dsdp::samplers::{Chain, Model, Observations, SamplerConfig};
use dsdp::sgp_prior::KernelParams;

// 7-point Gauss / 15-point Kronrod nodes on [-1, 1]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_9,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_20,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_488_98,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod integral of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let mut pieces = vec![(a, b, gk15(f, a, b))];
    for _ in 0..10_000 {
        let total: f64 = pieces.iter().map(|p| p.2 .0).sum();
        let err: f64 = pieces.iter().map(|p| p.2 .1).sum();
        if err <= rel_tol * total.abs() {
            return total;
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        pieces.push((lo, mid, gk15(f, lo, mid)));
        pieces.push((mid, hi, gk15(f, mid, hi)));
    }
    panic!("quadrature did not converge");
}

/// `ln ∫ exp(g(θ)) dθ` for a unimodal log-integrand peaked near `center`
/// with spread about `scale`.
pub fn log_integral(g: &dyn Fn(f64) -> f64, center: f64, scale: f64) -> f64 {
    let peak = g(center);
    let f = |t: f64| (g(t) - peak).exp();
    let half = 60.0 * scale;
    peak + integrate(&f, center - half, center + half, 1e-14).ln()
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

/// `ln ∫ ∏_j N(x_j; θ, v) · N(θ; m0, v/η2) dθ` by quadrature.
pub fn quadrature_evidence(xs: &[f64], m0: f64, eta2: f64, v: f64) -> f64 {
    let g = |t: f64| xs.iter().map(|&x| ln_normal(x, t, v)).sum::<f64>() + ln_normal(t, m0, v / eta2);
    let center = (eta2 * m0 + xs.iter().sum::<f64>()) / (eta2 + xs.len() as f64);
    let scale = (v / (eta2 + xs.len() as f64)).sqrt();
    log_integral(&g, center, scale)
}

pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    ln_normal(x, mean, var)
}

/// Normalized partition-mass law over all set partitions of `n`, keyed by the
/// restricted-growth string.
pub fn exact_partition_law(n: usize, h: &MarkedHyper) -> BTreeMap<Vec<usize>, f64> {
    let parts = enumerate_set_partitions(n).unwrap();
    let logs: Vec<f64> = parts.iter().map(|p| log_partition_mass(p, h, QMode::Exact)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    parts
        .into_iter()
        .zip(logs)
        .map(|(p, l)| (p.assignments().to_vec(), (l - max).exp() / z))
        .collect()
}

/// Placeholder data and settings for a likelihood-free DSDP chain.
pub fn prior_chain_setup(n: usize) -> (Observations, SamplerConfig, ExpFamSpec, KernelParams) {
    let data = Observations::scalar(vec![0.0; n]).unwrap();
    let cfg = SamplerConfig {
        model: Model::Dsdp,
        use_thinning: false,
        iters: 1,
        ..SamplerConfig::default()
    };
    (
        data,
        cfg,
        ExpFamSpec::standard(1, 1.0, 1.0).unwrap(),
        KernelParams::isotropic(1, 1.0, 1.0, 1e-6).unwrap(),
    )
}

/// Empirical law of the likelihood-free chain over `sweeps` sweeps, keyed by
/// canonical restricted-growth string.
pub fn prior_chain_law(n: usize, h: MarkedHyper, sweeps: usize, seed: u64) -> BTreeMap<Vec<usize>, f64> {
    let (data, cfg, spec, kp) = prior_chain_setup(n);
    let mut chain = Chain::new(&data, cfg, h, spec, kp, seed).unwrap();
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..sweeps {
        chain.prior_partition_step().unwrap();
        let canon = chain.partition().canonical();
        *counts.entry(canon.assignments().to_vec()).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / sweeps as f64))
        .collect()
}

pub fn tv<K: Ord + Clone>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> f64 {
    let mut keys: Vec<&K> = a.keys().collect();
    keys.extend(b.keys().filter(|k| !a.contains_key(*k)));
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

pub fn partition_of(rgs: &[usize]) -> Partition {
    Partition::from_labels(rgs).unwrap()
}
