//! Acceptance suite: one line per criterion, with every tolerance pinned below.
//!
//! Run with `cargo test --release -p riesz-core --test acceptance`, optionally followed by
//! `-- <ids>` to select criteria. On a single core the suite takes about 15 minutes, most of it
//! in the local laws (criterion 9).

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use riesz_core::energy::{
    commutator_an, electric_energy, hamiltonian, next_order_energy, splitting_residual, Configuration, Cube,
    ElectricQuadrature, LocalEnergyIntegrator, MeasureField,
};
use riesz_core::equilibrium::{boundary_exponent_fit, el_residual, solve_equilibrium, EquilibriumResult, Potential};
use riesz_core::grid::{Grid, GridMeasure, PowerTail, SampledFunction};
use riesz_core::kernel::{frac_laplacian_grid, kernel_constants, sobolev_seminorm, RieszParams, SeminormMethod};
use riesz_core::quad::GaussLegendre;
use riesz_core::sampler::{run_chain, sample_ensemble, Ensemble, Model, Schedule, Target};
use riesz_core::statistics::{
    bump, clt_report, fluctuation, laplace_estimate, local_law_report, CltMode, LocalLawOptions, TestFunction,
};
use riesz_core::transport::{decay_and_continuity_check, master_residual, solve_transport_1d};
use riesz_core::Result;

const SEED: u64 = 20240601;

// Criterion 1.
const TOL_C_DS: f64 = 1e-10;
const TOL_C_DALPHA: f64 = 1e-10;
const TOL_CBAR: f64 = 1e-12;
const TOL_ORACLE_SWEEP: f64 = 1e-10;
// Criterion 2.
const TOL_SEMICIRCLE_LAPLACIAN: f64 = 0.01;
const TOL_WEAK_INVERSE: f64 = 0.03;
// Criterion 3.
const TOL_SEMINORM_METHODS: f64 = 0.02;
const TOL_SEMINORM_SCALING: f64 = 0.01;
// Criterion 4.
const TOL_SEMICIRCLE_L1: f64 = 0.02;
const TOL_EL_RESIDUAL: f64 = 1e-3;
const TOL_DENSITY_EXPONENT: f64 = 0.05;
const TOL_LIFTOFF_EXPONENT: f64 = 0.1;
// Criterion 5.
const TOL_SPLITTING: f64 = 1e-3;
const SPLITTING_REFINEMENT_RATIO: f64 = 0.5;
// Criterion 6.
const TOL_ELECTRIC: f64 = 0.05;
// Criterion 7.
const TOL_LATTICE_TV: f64 = 0.02;
// Criterion 8.
const TOL_DENSITY_L1: f64 = 0.10;
// Criterion 9.
const TOL_LOCAL_SLOPE: f64 = 0.2;
const MAX_COUNT_VIOLATIONS: f64 = 0.01;
// Criterion 10.
const MIN_EFFECTIVE_SAMPLES: f64 = 2000.0;
const TOL_CLT_VARIANCE: f64 = 0.15;
const MAX_SKEWNESS: f64 = 0.2;
const MAX_EXCESS_KURTOSIS: f64 = 0.3;
const MEAN_SHIFT_SIGMAS: f64 = 3.0;
// Criterion 11.
const MAX_LAPLACE_SPREAD: f64 = 2.0;
// Criterion 12.
const COMMUTATOR_MARGIN: f64 = 2.0;
// Criterion 13.
const TOL_MASTER_RESIDUAL: f64 = 1e-2;
const MAX_BOUNDARY_JUMP: f64 = 0.05;
const TOL_TAIL_EXPONENT: f64 = 0.3;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(checks: &[(bool, String)]) -> Verdict {
    Verdict {
        pass: checks.iter().all(|c| c.0),
        detail: checks.iter().map(|c| format!("{}{}", if c.0 { "" } else { "✗ " }, c.1)).collect::<Vec<_>>().join("; "),
    }
}

/// Ensembles shared between criteria.
#[derive(Default)]
struct Shared {
    mean_field: Option<(Ensemble, EquilibriumResult)>,
    clt: Option<(Ensemble, EquilibriumResult, TestFunction)>,
}

type Criterion = fn(&mut Shared) -> Result<Verdict>;

// ---------------------------------------------------------------------------------------------
// Oracles

/// Lanczos approximation (g = 7, nine terms) with reflection below ½; relative accuracy ~1e-15.
fn lanczos_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const P: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return PI / ((PI * x).sin() * lanczos_gamma(1.0 - x));
    }
    let x = x - 1.0;
    let t = x + G + 0.5;
    let a = P.iter().enumerate().skip(1).fold(P[0], |acc, (i, p)| acc + p / (x + i as f64));
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

fn oracle_constants(d: usize, s: f64) -> (f64, f64, f64) {
    let df = d as f64;
    let a = 0.5 * (df - s);
    let c_ds = if s == 0.0 {
        PI
    } else {
        PI.powf(0.5 * df) * 4f64.powf(a) * lanczos_gamma(a) / lanczos_gamma(0.5 * df - a)
    };
    let c_da = a * 4f64.powf(a) * lanczos_gamma(0.5 * df + a) / (PI.powf(0.5 * df) * lanczos_gamma(1.0 - a));
    (c_ds, c_da, -lanczos_gamma(1.0 + a) / lanczos_gamma(1.0 - a))
}

/// The constant `C` in `(−Δ)^α g = C δ` for `d = 1`.
fn oracle_green(s: f64) -> f64 {
    if s == 0.0 {
        PI
    } else {
        oracle_constants(1, s).0 / s
    }
}

/// `∫_a^b f` with Gauss–Legendre panels graded geometrically towards both ends and towards `split`.
fn integrate_around(a: f64, b: f64, split: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    let rule = GaussLegendre::cached(20);
    let c = split.clamp(a, b);
    let mut total = 0.0;
    if c > a {
        total += rule.integrate_graded(0.0, c - a, 40, 0.5, |t| f(c - t));
    }
    if c < b {
        total += rule.integrate_graded(c, b, 40, 0.5, f);
    }
    total
}

/// Inverse-CDF draw from a one-dimensional cell measure, uniform within cells.
fn draw(mu: &GridMeasure, rng: &mut ChaCha8Rng) -> f64 {
    let total = mu.total_mass();
    let mut u = rng.random::<f64>() * total;
    let h = mu.grid.h;
    for (k, &m) in mu.mass.iter().enumerate() {
        if u < m {
            return mu.grid.x(k) - 0.5 * h + h * u / m;
        }
        u -= m;
    }
    let last = mu.mass.iter().rposition(|&m| m > 0.0).unwrap_or(0);
    mu.grid.x(last)
}

fn draw_config(mu: &GridMeasure, n: usize, rng: &mut ChaCha8Rng) -> Result<Configuration> {
    let xs: Vec<f64> = (0..n).map(|_| draw(mu, rng)).collect();
    Configuration::from_line(&xs)
}

fn equilibrium(s: f64, a: f64, b: f64, cells: usize) -> Result<(RieszParams, EquilibriumResult)> {
    let p = RieszParams::new(1, s)?;
    let grid = Grid::covering_1d(a, b, cells)?;
    Ok((p, solve_equilibrium(&Potential::quadratic(1.0), &grid, &p, 1e-10)?))
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

// ---------------------------------------------------------------------------------------------
// Criteria

fn constants(_: &mut Shared) -> Result<Verdict> {
    let (c_ds, _, _) = kernel_constants(1, 0.5)?;
    let (_, c_da, cbar) = kernel_constants(1, 0.0)?;
    let want_ds = (2.0 * PI).sqrt();
    let oracle = oracle_constants(1, 0.5).0;
    let mut sweep: f64 = 0.0;
    for (d, s) in [(1, -0.5), (1, 0.3), (1, 0.5), (1, 0.9), (2, 0.5), (2, 1.0), (2, 1.7)] {
        let got = kernel_constants(d, s)?;
        let want = oracle_constants(d, s);
        sweep = sweep.max(rel(got.0, want.0)).max(rel(got.1, want.1)).max(rel(got.2, want.2));
    }
    Ok(verdict(&[
        ((c_ds - want_ds).abs() <= TOL_C_DS && (c_ds - oracle).abs() <= TOL_C_DS, format!("c_{{1,0.5}} = {c_ds:.15} (√(2π) = {want_ds:.15})")),
        ((c_da - 1.0 / PI).abs() <= TOL_C_DALPHA, format!("c_{{1,α=0.5}} = {c_da:.15}")),
        ((cbar + 0.5).abs() <= TOL_CBAR, format!("c̄_0.5 = {cbar:.15}")),
        (sweep <= TOL_ORACLE_SWEEP, format!("max relative gap to the Lanczos oracle over 7 (d, s) = {sweep:.1e}")),
    ]))
}

/// `max |(−Δ)^α (g∗ρ) − C ρ| / max C ρ` over the nodes with `|x| < 0.9`, for `ρ` a bump of
/// total mass `M` (`s > 0`) or the derivative of a bump (`s = 0`, so that `g∗ρ` decays).
fn weak_inverse_error(s: f64) -> Result<f64> {
    let alpha = 0.5 * (1.0 - s);
    let green = oracle_green(s);
    let dipole = s == 0.0;
    let rho = move |y: f64| {
        if dipole {
            let u = 1.0 - y * y;
            if u <= 0.0 {
                0.0
            } else {
                -2.0 * y / (u * u) * bump(y)
            }
        } else {
            bump(y)
        }
    };
    let g = move |r: f64| if s == 0.0 { -r.abs().ln() } else { r.abs().powf(-s) / s };
    // ∫_{−1}^{1} g(x − y) dy for |x| < 1.
    let g_mass = move |x: f64| {
        if s == 0.0 {
            let t = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
            2.0 - t(1.0 + x) - t(1.0 - x)
        } else {
            ((1.0 + x).powf(1.0 - s) + (1.0 - x).powf(1.0 - s)) / (s * (1.0 - s))
        }
    };
    let potential = |x: f64| {
        let rx = if x.abs() < 1.0 { rho(x) } else { 0.0 };
        let smooth = integrate_around(-1.0, 1.0, x, &|y| if y == x { 0.0 } else { g(x - y) * (rho(y) - rx) });
        smooth + if rx != 0.0 { rx * g_mass(x) } else { 0.0 }
    };
    let grid = Grid::covering_1d(-8.0, 8.0, 4096)?;
    let tail = if dipole {
        let d = integrate_around(-1.0, 1.0, 0.0, &|y| y * rho(y));
        PowerTail { center: [0.0, 0.0], exponent: 1.0, amplitude: d, amplitude_left: Some(-d) }
    } else {
        let m = integrate_around(-1.0, 1.0, 0.0, &rho);
        PowerTail::symmetric([0.0, 0.0], s, m / s)
    };
    let u = SampledFunction::from_fn(grid.clone(), |x| potential(x[0])).with_tail(tail);
    let lap = frac_laplacian_grid(&u, alpha)?;
    let peak = (0..grid.len()).map(|k| (green * rho(grid.x(k))).abs()).fold(0.0, f64::max);
    let err = (0..grid.len())
        .filter(|&k| grid.x(k).abs() < 0.9)
        .map(|k| (lap[k] - green * rho(grid.x(k))).abs())
        .fold(0.0, f64::max);
    Ok(err / peak)
}

fn fractional_laplacian(_: &mut Shared) -> Result<Verdict> {
    let a = 0.5;
    let grid = Grid::covering_1d(-1.25, 1.25, 4096)?;
    let f = SampledFunction::from_fn(grid.clone(), |x| (1.0 - x[0] * x[0]).max(0.0).sqrt());
    let vals = frac_laplacian_grid(&f, a)?;
    let want = 4f64.powf(a) * lanczos_gamma(1.0 + a) * lanczos_gamma(0.5 + a) / lanczos_gamma(0.5);
    let semicircle = (0..grid.len())
        .filter(|&k| grid.x(k).abs() < 0.8)
        .map(|k| rel(vals[k], want))
        .fold(0.0, f64::max);
    let w_half = weak_inverse_error(0.5)?;
    let w_log = weak_inverse_error(0.0)?;
    Ok(verdict(&[
        (semicircle <= TOL_SEMICIRCLE_LAPLACIAN, format!("(−Δ)^½ of the semicircle: max rel error {semicircle:.2e} on (−0.8, 0.8)")),
        (w_half <= TOL_WEAK_INVERSE, format!("(−Δ)^α(g∗ρ) = Cρ at s = 0.5: {w_half:.2e}")),
        (w_log <= TOL_WEAK_INVERSE, format!("at s = 0: {w_log:.2e}")),
    ]))
}

fn seminorms(_: &mut Shared) -> Result<Verdict> {
    let line = |lo: f64, hi: f64, cells: usize, c: f64, w: f64| -> Result<SampledFunction> {
        Ok(SampledFunction::from_fn(Grid::covering_1d(lo, hi, cells)?, move |x| bump((x[0] - c) / w)))
    };
    let square = |half: f64, cells: usize, w: f64| -> Result<SampledFunction> {
        Ok(SampledFunction::from_fn(Grid::covering_square(-half, half, cells)?, move |x| {
            bump((x[0] * x[0] + x[1] * x[1]).sqrt() / w)
        }))
    };
    let cases: Vec<(&str, f64, SampledFunction, SampledFunction, f64)> = vec![
        ("d=1 α=0.25", 0.25, line(-2.0, 2.0, 512, 0.0, 1.0)?, line(-4.0, 4.0, 1024, 0.0, 2.0)?, 1.0),
        ("d=1 α=0.5", 0.5, line(-2.0, 2.0, 512, 0.3, 0.6)?, line(-4.0, 4.0, 1024, 0.6, 1.2)?, 1.0),
        ("d=2 α=0.4", 0.4, square(1.5, 96, 1.0)?, square(3.0, 192, 2.0)?, 2.0),
    ];
    let lambda: f64 = 2.0;
    let mut checks = Vec::new();
    for (name, alpha, f, f_scaled, d) in &cases {
        let four = sobolev_seminorm(f, *alpha, SeminormMethod::Fourier)?;
        let gag = sobolev_seminorm(f, *alpha, SeminormMethod::Gagliardo)?;
        let gap = rel(gag, four);
        checks.push((gap <= TOL_SEMINORM_METHODS, format!("{name}: Fourier {four:.5} vs Gagliardo {gag:.5} ({gap:.1e})")));
        let law = lambda.powf(d - 2.0 * alpha);
        for (method, base) in [(SeminormMethod::Fourier, four), (SeminormMethod::Gagliardo, gag)] {
            let ratio = sobolev_seminorm(f_scaled, *alpha, method)? / base;
            let e = rel(ratio, law);
            checks.push((e <= TOL_SEMINORM_SCALING, format!("{method:?} λ-ratio {ratio:.5} vs {law:.5} ({e:.1e})")));
        }
    }
    Ok(verdict(&checks))
}

fn equilibrium_measure(_: &mut Shared) -> Result<Verdict> {
    let (_, semi) = equilibrium(0.0, -1.5, 1.5, 512)?;
    let cdf = |x: f64| {
        let x = x.clamp(-1.0, 1.0);
        0.5 + (x * (1.0 - x * x).sqrt() + x.asin()) / PI
    };
    let h = semi.mu.grid.h;
    let l1: f64 = (0..semi.mu.grid.len())
        .map(|k| {
            let x = semi.mu.grid.x(k);
            (semi.mu.mass[k] - (cdf(x + 0.5 * h) - cdf(x - 0.5 * h))).abs()
        })
        .sum();

    let (_, log_fine) = equilibrium(0.0, -1.5, 1.5, 1024)?;
    let (_, half) = equilibrium(0.5, -1.6, 1.6, 1024)?;
    let mut el: f64 = 0.0;
    for r in [&semi, &log_fine, &half] {
        let e = el_residual(r);
        el = el.max(e.below / e.scale).max(e.on_support / e.scale);
    }
    let fit0 = boundary_exponent_fit(&log_fine, 24)?;
    let fit5 = boundary_exponent_fit(&half, 24)?;
    Ok(verdict(&[
        (l1 < TOL_SEMICIRCLE_L1, format!("semicircle L¹ error {l1:.2e} at 512 cells")),
        (el < TOL_EL_RESIDUAL, format!("EL residual {el:.1e}·scale")),
        (
            (fit0.density_exponent - 0.5).abs() <= TOL_DENSITY_EXPONENT,
            format!("s=0 density exponent {:.3}", fit0.density_exponent),
        ),
        (
            (fit5.density_exponent - 0.75).abs() <= TOL_DENSITY_EXPONENT,
            format!("s=0.5 density exponent {:.3}", fit5.density_exponent),
        ),
        (
            (fit5.liftoff_exponent - 1.25).abs() <= TOL_LIFTOFF_EXPONENT,
            format!("lift-off {:.3}", fit5.liftoff_exponent),
        ),
    ]))
}

fn splitting(_: &mut Shared) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let configs = (0..50)
        .map(|_| {
            let n = rng.random_range(2..=32);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.3..1.3)).collect();
            Configuration::from_line(&xs)
        })
        .collect::<Result<Vec<_>>>()?;
    let v = Potential::quadratic(1.0);
    let mut levels = Vec::new();
    for cells in [512, 1024, 2048] {
        let (p, eq) = equilibrium(0.5, -1.6, 1.6, cells)?;
        let rels = configs
            .iter()
            .map(|x| Ok(splitting_residual(x, &v, &eq, &p)? / hamiltonian(x, &v, &p)?.abs()))
            .collect::<Result<Vec<f64>>>()?;
        levels.push(rels);
    }
    let worst = levels[1].iter().copied().fold(0.0, f64::max);
    let median_ratio = |a: &[f64], b: &[f64]| {
        let mut r: Vec<f64> = a.iter().zip(b).map(|(x, y)| y / x).collect();
        r.sort_by(f64::total_cmp);
        r[r.len() / 2]
    };
    let r1 = median_ratio(&levels[0], &levels[1]);
    let r2 = median_ratio(&levels[1], &levels[2]);
    Ok(verdict(&[
        (worst < TOL_SPLITTING, format!("max relative residual {worst:.1e} over 50 configs at 1024 cells")),
        (r1 <= SPLITTING_REFINEMENT_RATIO, format!("median ratio 512→1024 {r1:.3}")),
        (r2 <= SPLITTING_REFINEMENT_RATIO, format!("1024→2048 {r2:.3}")),
    ]))
}

fn electric(_: &mut Shared) -> Result<Verdict> {
    let (p, eq) = equilibrium(0.5, -1.6, 1.6, 256)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 6);
    let quad = ElectricQuadrature::default();
    let mut worst: f64 = 0.0;
    let mut at = 0;
    for n in [1usize, 2, 4, 8, 12, 16] {
        for _ in 0..3 {
            let x = draw_config(&eq.mu, n, &mut rng)?;
            let direct = next_order_energy(&x, &eq.mu, &p)?;
            let e = electric_energy(&x, &eq.mu, &p, &quad)?;
            let err = (e.next_order - direct).abs() / direct.abs();
            if err > worst {
                worst = err;
                at = n;
            }
        }
    }
    Ok(verdict(&[(worst < TOL_ELECTRIC, format!("max relative gap {worst:.2e} (N = {at}) over 18 configs, N ≤ 16"))]))
}

fn lattice_exactness(_: &mut Shared) -> Result<Verdict> {
    let p = RieszParams::new(1, 0.5)?;
    let (origin, spacing, states) = (-1.5, 3.0 / 63.0, 64usize);
    let beta = 2.0;
    let v = Potential::quadratic(1.0);
    let model = Model::Lattice { potential: v.clone(), origin, spacing, states };
    let target = Target::new(p, model, 1, beta)?;
    let schedule = Schedule { sweeps: 1_000_000, burn_in: 10_000, thinning: 1, initial_scale: 0.2 };
    let chain = run_chain(&target, None, None, &schedule, SEED, 0)?;
    let weights: Vec<f64> = (0..states).map(|k| (-beta * v.value(1, [origin + k as f64 * spacing, 0.0])).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut hist = vec![0.0; states];
    for x in &chain.positions {
        hist[((x - origin) / spacing).round() as usize] += 1.0 / chain.positions.len() as f64;
    }
    let tv = 0.5 * hist.iter().zip(&weights).map(|(h, w)| (h - w / z).abs()).sum::<f64>();

    let again = run_chain(&target, None, None, &schedule, SEED, 0)?;
    let same_chain = chain.positions.iter().zip(&again.positions).all(|(a, b)| a.to_bits() == b.to_bits())
        && chain.positions.len() == again.positions.len();
    let confined = Target::new(p, Model::Confined { potential: v }, 8, beta)?;
    let short = Schedule { sweeps: 400, burn_in: 100, thinning: 4, initial_scale: 0.2 };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().expect("pool");
    let a = one.install(|| sample_ensemble(&confined, None, &short, 4, SEED))?;
    let b = four.install(|| sample_ensemble(&confined, None, &short, 4, SEED))?;
    let bits = |e: &Ensemble| e.positions.iter().chain(&e.energies).map(|v| v.to_bits()).collect::<Vec<_>>();
    let same_ensemble = bits(&a) == bits(&b);
    Ok(verdict(&[
        (tv < TOL_LATTICE_TV, format!("N=1 lattice TV {tv:.2e} over {} steps", chain.positions.len())),
        (same_chain, "fixed seed reproduces the chain bit for bit".into()),
        (same_ensemble, "1 and 4 threads give bit-identical ensembles".into()),
    ]))
}

fn mean_field(shared: &mut Shared) -> Result<Verdict> {
    let (p, eq) = equilibrium(0.0, -1.5, 1.5, 512)?;
    let target = Target::new(p, Model::Confined { potential: Potential::quadratic(1.0) }, 64, 2.0)?;
    let schedule = Schedule { sweeps: 25_000, burn_in: 5_000, thinning: 160, initial_scale: 0.05 };
    let ens = sample_ensemble(&target, Some(&eq.mu), &schedule, 4, SEED ^ 8)?;
    let (lo, hi, bins) = (-1.5, 1.5, 60usize);
    let w = (hi - lo) / bins as f64;
    let mut hist = vec![0.0; bins];
    let mut outside = 0.0;
    let unit = 1.0 / ens.positions.len() as f64;
    for x in &ens.positions {
        let b = ((x - lo) / w).floor();
        if b >= 0.0 && (b as usize) < bins {
            hist[b as usize] += unit;
        } else {
            outside += unit;
        }
    }
    let l1 = outside
        + (0..bins)
            .map(|b| (hist[b] - eq.mu.interval_mass(lo + b as f64 * w, lo + (b + 1) as f64 * w)).abs())
            .sum::<f64>();
    let sweeps = ens.meta.chains * schedule.sweeps;
    let v = verdict(&[(l1 < TOL_DENSITY_L1, format!("density L¹ distance {l1:.3} ({bins} bins, {sweeps} sweeps, {} samples)", ens.len()))]);
    shared.mean_field = Some((ens, eq));
    Ok(v)
}

fn local_laws(shared: &mut Shared) -> Result<Verdict> {
    if shared.mean_field.is_none() {
        mean_field(shared)?;
    }
    let (ens, eq) = shared.mean_field.as_ref().expect("mean-field ensemble");
    let report = local_law_report(ens, eq, &[0.125, 0.25, 0.5], &LocalLawOptions::default())?;
    let slope = report.slope.unwrap_or(f64::NAN);
    let rows: Vec<String> = report.rows.iter().map(|r| format!("ℓ={} E={:.3}", r.scale, r.energy_mean)).collect();
    Ok(verdict(&[
        ((slope - 1.0).abs() <= TOL_LOCAL_SLOPE, format!("slope {slope:.3} ({}) over {} samples", rows.join(", "), ens.len())),
        (
            report.count_violation_rate < MAX_COUNT_VIOLATIONS,
            format!("count violations {:.2e} with C = {:.3}", report.count_violation_rate, report.count_constant),
        ),
    ]))
}

fn clt(shared: &mut Shared) -> Result<Verdict> {
    let n = 256usize;
    let (p, eq) = equilibrium(0.0, -1.5, 1.5, 1024)?;
    let ell = (n as f64).powf(-0.25);
    let phi = TestFunction::new(1, [0.0, 0.0], ell)?;
    let target = Target::new(p, Model::Confined { potential: Potential::quadratic(1.0) }, n, 2.0)?;
    let schedule = Schedule { sweeps: 15_000, burn_in: 3_000, thinning: 4, initial_scale: 0.01 };
    let chains = rayon::current_num_threads().clamp(4, 8);
    let ens = sample_ensemble(&target, Some(&eq.mu), &schedule, chains, SEED ^ 10)?;
    let r = clt_report(&ens, &phi, &eq, CltMode::Mesoscopic, None)?;
    let var_gap = rel(r.empirical_variance, r.predicted_variance);
    let centred = (r.empirical_mean - r.predicted_mean_shift).abs();
    let v = verdict(&[
        (r.effective_samples >= MIN_EFFECTIVE_SAMPLES, format!("ESS {:.0} ({} chains)", r.effective_samples, chains)),
        (
            var_gap <= TOL_CLT_VARIANCE,
            format!(
                "variance {:.4} ± {:.4} vs 2Λ/C = {:.4} ({var_gap:.3}); literal prefactor gives {:.4}",
                r.empirical_variance, r.variance_std_error, r.predicted_variance, r.predicted_variance_literal
            ),
        ),
        (r.skewness.abs() < MAX_SKEWNESS, format!("skewness {:.3}", r.skewness)),
        (r.excess_kurtosis.abs() < MAX_EXCESS_KURTOSIS, format!("excess kurtosis {:.3}", r.excess_kurtosis)),
        (
            centred <= MEAN_SHIFT_SIGMAS * r.mean_std_error,
            format!("mean {:.4} ± {:.4} vs shift {:.4}", r.empirical_mean, r.mean_std_error, r.predicted_mean_shift),
        ),
    ]);
    shared.clt = Some((ens, eq, phi));
    Ok(v)
}

fn laplace(shared: &mut Shared) -> Result<Verdict> {
    if shared.clt.is_none() {
        clt(shared)?;
    }
    let (ens, eq, phi) = shared.clt.as_ref().expect("CLT ensemble");
    let raw = (0..ens.len()).map(|k| Ok(fluctuation(&ens.configuration(k)?, phi, &eq.mu))).collect::<Result<Vec<f64>>>()?;
    let report = laplace_estimate(&raw, &[-0.2, -0.1, 0.1, 0.2], ens.meta.beta, ens.meta.n, phi.scale, &ens.meta.params)?;
    let reliable = report.points.iter().all(|p| p.reliable);
    let levels: Vec<String> = report.level_constants.iter().map(|(t, c)| format!("C({t}) = {c:.4}")).collect();
    Ok(verdict(&[
        (report.constant_spread <= MAX_LAPLACE_SPREAD, format!("spread {:.3} ({})", report.constant_spread, levels.join(", "))),
        (reliable, "no single sample dominates the exponential means".into()),
    ]))
}

fn commutator(_: &mut Shared) -> Result<Verdict> {
    let n = 32usize;
    let (p, eq) = equilibrium(0.5, -1.6, 1.6, 512)?;
    let psi = TestFunction::new(1, [0.0, 0.0], 1.0)?;
    let grad = (0..20_000).map(|i| psi.derivative(1, -0.5 + i as f64 / 20_000.0).abs()).fold(0.0, f64::max);
    let omega = Cube { center: [0.0, 0.0], side: 1.5 };
    let field = MeasureField::new(&eq.mu, &p)?;
    let local = LocalEnergyIntegrator::new(&field, &eq.mu, omega, n, &p, ElectricQuadrature::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 12);
    let scale = p.n_pow_s_over_d(n);
    let mut constants = Vec::with_capacity(100);
    for _ in 0..100 {
        let x = draw_config(&eq.mu, n, &mut rng)?;
        let a = commutator_an(&x, &eq.mu, |t| psi.value([t, 0.0]), 1, &p)?.abs();
        let e = local.evaluate(&x)?;
        // C solves |A| = C ‖ψ'‖ (F_Ω + C #I N^{s/d}).
        let (lin, quad) = (grad * e.value, grad * e.point_count as f64 * scale);
        let c = if quad > 0.0 { (-lin + (lin * lin + 4.0 * quad * a).sqrt()) / (2.0 * quad) } else { a / lin };
        constants.push(c);
    }
    let (fit, holdout) = constants.split_at(50);
    let fitted = fit.iter().copied().fold(0.0, f64::max);
    let cover = COMMUTATOR_MARGIN * fitted;
    let violations = holdout.iter().filter(|&&c| c > cover).count();
    let reach = holdout.iter().copied().fold(0.0, f64::max) / fitted;
    Ok(verdict(&[(
        violations == 0,
        format!(
            "C = {COMMUTATOR_MARGIN}·{fitted:.4} from 50 configs; {violations} of 50 held-out configs exceed it; held-out max / fitted max {reach:.3}"
        ),
    )]))
}

fn transport(_: &mut Shared) -> Result<Verdict> {
    let mut checks = Vec::new();
    for (s, half) in [(0.0, 4.5), (0.5, 6.0)] {
        let (p, eq) = equilibrium(s, -half, half, 2048)?;
        let phi = TestFunction::new(1, [0.0, 0.0], 0.4)?;
        let field = solve_transport_1d(&phi, &eq, &p)?;
        let res = master_residual(&field, &phi, &eq, &p)?;
        let decay = decay_and_continuity_check(&field, &phi, &p)?;
        checks.push((res.sup < TOL_MASTER_RESIDUAL, format!("s={s}: residual {:.1e}", res.sup)));
        checks.push((decay.jump_at_boundary < MAX_BOUNDARY_JUMP, format!("jump {:.3}", decay.jump_at_boundary)));
        checks.push((
            (decay.tail_exponent - (s + 2.0)).abs() <= TOL_TAIL_EXPONENT,
            format!("tail exponent {:.3}", decay.tail_exponent),
        ));
    }
    Ok(verdict(&checks))
}

const CRITERIA: &[(usize, &str, Option<f64>, Criterion)] = &[
    (1, "kernel constants", Some(1.0), constants),
    (2, "fractional Laplacian", Some(60.0), fractional_laplacian),
    (3, "Sobolev seminorms", None, seminorms),
    (4, "equilibrium measure", Some(120.0), equilibrium_measure),
    (5, "splitting identity", None, splitting),
    (6, "electric formulation", Some(300.0), electric),
    (7, "sampler exactness", None, lattice_exactness),
    (8, "mean-field convergence", Some(600.0), mean_field),
    (9, "local laws", Some(1800.0), local_laws),
    (10, "CLT (flagship)", Some(4.0 * 3600.0), clt),
    (11, "Laplace-transform bound", None, laplace),
    (12, "commutator inequality", None, commutator),
    (13, "transport", Some(120.0), transport),
];

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    let mut ran = 0;
    for &(id, name, budget, criterion) in CRITERIA {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| criterion(&mut shared)));
        let secs = start.elapsed().as_secs_f64();
        let (mut pass, detail) = match outcome {
            Ok(Ok(v)) => (v.pass, v.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        let timing = match budget {
            Some(b) if secs > b => {
                pass = false;
                format!("{secs:.1} s, over the {b} s budget")
            }
            Some(b) => format!("{secs:.1} s of {b} s"),
            None => format!("{secs:.1} s"),
        };
        failed += !pass as usize;
        println!("criterion {id:>2} {} {name}: {detail} [{timing}]", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
