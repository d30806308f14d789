//! Straight-line reference implementations used as test oracles.
//!
//! Nothing here depends on the main crate. Everything works on flat slices
//! in NCHW order, loops naively, and computes in `f64`. The Gaussian low-pass
//! is a direct 2D convolution with the outer-product kernel rather than two
//! separable passes.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn at(&self, b: usize, ch: usize, y: usize, x: usize) -> usize {
        ((b * self.c + ch) * self.h + y) * self.w + x
    }
}

pub fn to_f64(xs: &[f32]) -> Vec<f64> {
    xs.iter().map(|&v| v as f64).collect()
}

pub fn dot(a: &[f64], b: &[f64], d: Dims) -> Vec<f64> {
    let mut out = vec![0.0; d.n];
    for (s, acc) in out.iter_mut().enumerate() {
        for ch in 0..d.c {
            for y in 0..d.h {
                for x in 0..d.w {
                    let i = d.at(s, ch, y, x);
                    *acc += a[i] * b[i];
                }
            }
        }
    }
    out
}

pub fn std_two_pass(a: &[f64], d: Dims) -> Vec<f64> {
    let m = d.c * d.h * d.w;
    (0..d.n)
        .map(|b| {
            let s = &a[b * m..(b + 1) * m];
            let mean = s.iter().sum::<f64>() / m as f64;
            (s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64).sqrt()
        })
        .collect()
}

/// Sort, then interpolate at position `q * (m - 1)`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let k = pos.floor() as usize;
    if k + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[k] + (pos - k as f64) * (v[k + 1] - v[k])
}

pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Mirror by repeated folding, no border repeat.
pub fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Direct 2D Gaussian convolution of every plane.
pub fn blur(a: &[f64], d: Dims, sigma: f64) -> Vec<f64> {
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as i64;
    let mut out = vec![0.0; a.len()];
    for b in 0..d.n {
        for ch in 0..d.c {
            for y in 0..d.h {
                for x in 0..d.w {
                    let mut acc = 0.0;
                    for ky in -r..=r {
                        for kx in -r..=r {
                            let yy = reflect(y as i64 + ky, d.h);
                            let xx = reflect(x as i64 + kx, d.w);
                            acc += taps[(ky + r) as usize] * taps[(kx + r) as usize] * a[d.at(b, ch, yy, xx)];
                        }
                    }
                    out[d.at(b, ch, y, x)] = acc;
                }
            }
        }
    }
    out
}

/// Channel-averaged Sobel magnitude, `(n, 1, h, w)`.
pub fn sobel(a: &[f64], d: Dims) -> Vec<f64> {
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut out = vec![0.0; d.n * d.h * d.w];
    for b in 0..d.n {
        for y in 0..d.h {
            for x in 0..d.w {
                let mut sum = 0.0;
                for ch in 0..d.c {
                    let (mut gx, mut gy) = (0.0, 0.0);
                    for j in 0..3 {
                        for i in 0..3 {
                            let v = a[d.at(b, ch, reflect(y as i64 + j as i64 - 1, d.h), reflect(x as i64 + i as i64 - 1, d.w))];
                            gx += kx[j][i] * v;
                            gy += ky[j][i] * v;
                        }
                    }
                    sum += (gx * gx + gy * gy).sqrt();
                }
                out[(b * d.h + y) * d.w + x] = sum / d.c as f64;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefMode {
    Zero,
    Rescale,
}

#[derive(Debug, Clone, Copy)]
pub struct RefParams {
    pub s: f64,
    pub alpha: f64,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub sigma: f64,
    pub beta: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
}

impl Default for RefParams {
    fn default() -> Self {
        Self {
            s: 4.5,
            alpha: 0.7,
            lambda_low: 0.6,
            lambda_high: 1.3,
            sigma: 1.0,
            beta: 0.8,
            tau_lo: 0.45,
            tau_hi: 0.60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefState {
    pub rho: f64,
    pub mode: RefMode,
    pub seeded: bool,
}

impl Default for RefState {
    fn default() -> Self {
        Self {
            rho: 0.0,
            mode: RefMode::Zero,
            seeded: false,
        }
    }
}

/// Hysteresis replay: returns the new `(rho, mode)`.
pub fn controller_step(state: RefState, r: f64, p: &RefParams) -> RefState {
    let rho = if state.seeded { p.beta * state.rho + (1.0 - p.beta) * r } else { r };
    let mode = if rho >= p.tau_hi {
        RefMode::Rescale
    } else if rho <= p.tau_lo {
        RefMode::Zero
    } else {
        state.mode
    };
    RefState { rho, mode, seeded: true }
}

pub struct RefStepOut {
    pub y: Vec<f64>,
    pub r_hf: f64,
    pub mode: RefMode,
    pub state: RefState,
}

/// The two-branch guidance step written out line by line.
pub fn guidance_step(
    yc: &[f64],
    yu: &[f64],
    d: Dims,
    p: &RefParams,
    state: RefState,
    force: Option<RefMode>,
    mask: Option<(&[f64], usize)>,
) -> RefStepOut {
    let m = d.c * d.h * d.w;
    let delta: Vec<f64> = yc.iter().zip(yu).map(|(c, u)| c - u).collect();
    let low = blur(&delta, d, p.sigma);
    let high: Vec<f64> = delta.iter().zip(&low).map(|(a, l)| a - l).collect();

    let mut r_sum = 0.0;
    for b in 0..d.n {
        let el: f64 = low[b * m..(b + 1) * m].iter().map(|v| v * v).sum();
        let eh: f64 = high[b * m..(b + 1) * m].iter().map(|v| v * v).sum();
        r_sum += if el + eh > 0.0 { eh / (el + eh) } else { 0.0 };
    }
    let r_hf = r_sum / d.n as f64;
    let state = controller_step(state, r_hf, p);
    let mode = force.unwrap_or(state.mode);

    let gate = |i: usize| -> f64 {
        match mask {
            None => 1.0,
            Some((g, gc)) => {
                let b = i / m;
                let ch = (i / (d.h * d.w)) % d.c;
                let pix = i % (d.h * d.w);
                let gch = if gc == 1 { 0 } else { ch };
                g[(b * gc + gch) * d.h * d.w + pix]
            }
        }
    };

    let mut y = vec![0.0; yc.len()];
    match mode {
        RefMode::Zero => {
            let cu = dot(yc, yu, d);
            let uu = dot(yu, yu, d);
            let ap: Vec<f64> = (0..d.n).map(|b| if uu[b] > 1e-12 { cu[b] / uu[b] } else { 0.0 }).collect();
            let r: Vec<f64> = (0..yc.len()).map(|i| yc[i] - ap[i / m] * yu[i]).collect();
            let rl = blur(&r, d, p.sigma);
            for i in 0..y.len() {
                let t = p.lambda_low * rl[i] + p.lambda_high * (r[i] - rl[i]);
                y[i] = ap[i / m] * yu[i] + p.s * gate(i) * t;
            }
        }
        RefMode::Rescale => {
            let mut ycfg = vec![0.0; yc.len()];
            for i in 0..y.len() {
                let t = p.lambda_low * low[i] + p.lambda_high * high[i];
                ycfg[i] = yu[i] + p.s * gate(i) * t;
            }
            let sc = std_two_pass(yc, d);
            let sg = std_two_pass(&ycfg, d);
            for i in 0..y.len() {
                let b = i / m;
                let rescaled = ycfg[i] * sc[b] / sg[b].max(1e-8);
                y[i] = p.alpha * rescaled + (1.0 - p.alpha) * ycfg[i];
            }
        }
    }
    RefStepOut { y, r_hf, mode, state }
}

/// Clip each sample into its own interpolated `[q_lo, q_hi]` quantiles.
/// Returns clipped values and the per-sample bounds.
pub fn qclamp(x: &[f64], d: Dims, q_lo: f64, q_hi: f64) -> (Vec<f64>, Vec<(f64, f64)>) {
    let m = d.c * d.h * d.w;
    let mut out = x.to_vec();
    let mut bounds = vec![];
    for b in 0..d.n {
        let finite: Vec<f64> = x[b * m..(b + 1) * m].iter().cloned().filter(|v| v.is_finite()).collect();
        let lo = quantile(&finite, q_lo);
        let hi = quantile(&finite, q_hi);
        for v in &mut out[b * m..(b + 1) * m] {
            *v = if v.is_nan() { 0.0f64.max(lo).min(hi) } else { v.max(lo).min(hi) };
        }
        bounds.push((lo, hi));
    }
    (out, bounds)
}

/// `x + alpha * g_edge * g_depth * (x - blur(x))`.
pub fn inject(x: &[f64], d: Dims, alpha: f64, sigma: f64, edge_strength: f64, depth: Option<&[f64]>) -> Vec<f64> {
    let bl = blur(x, d, sigma);
    let mag = sobel(x, d);
    let plane = d.h * d.w;
    let mut out = vec![0.0; x.len()];
    for b in 0..d.n {
        let mmax = mag[b * plane..(b + 1) * plane].iter().cloned().fold(0.0, f64::max);
        let (dmin, dmax) = match depth {
            Some(dp) => dp[b * plane..(b + 1) * plane]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, z), &v| (a.min(v), z.max(v))),
            None => (0.0, 0.0),
        };
        for ch in 0..d.c {
            for pix in 0..plane {
                let i = (b * d.c + ch) * plane + pix;
                let ge = if mmax > 0.0 { 1.0 - edge_strength * mag[b * plane + pix] / mmax } else { 1.0 };
                let gd = match depth {
                    Some(dp) if dmax > dmin => (dp[b * plane + pix] - dmin) / (dmax - dmin),
                    _ => 1.0,
                };
                out[i] = x[i] + alpha * ge * gd * (x[i] - bl[i]);
            }
        }
    }
    out
}

pub fn karras(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Vec<f64> {
    let mut s: Vec<f64> = (0..steps)
        .map(|i| {
            let t = if steps > 1 { i as f64 / (steps - 1) as f64 } else { 0.0 };
            let a = sigma_max.powf(1.0 / rho);
            let b = sigma_min.powf(1.0 / rho);
            (a + t * (b - a)).powf(rho)
        })
        .collect();
    s.push(0.0);
    s
}

/// Plain CFG Euler loop with exact-residual predictors.
pub fn plain_cfg_loop(x_init: &[f64], tc: &[f64], tu: &[f64], sigmas: &[f64], s: f64) -> Vec<f64> {
    let mut x = x_init.to_vec();
    for i in 0..sigmas.len() - 1 {
        let (sg, sn) = (sigmas[i], sigmas[i + 1]);
        for j in 0..x.len() {
            let yc = (x[j] - tc[j]) / sg;
            let yu = (x[j] - tu[j]) / sg;
            let y = yu + s * (yc - yu);
            let x0 = x[j] - sg * y;
            x[j] = x0 + sn * y;
        }
    }
    x
}

pub struct RefRunOut {
    pub x: Vec<f64>,
    pub modes: Vec<RefMode>,
    pub r_hf: Vec<f64>,
    pub rho: Vec<f64>,
    pub alpha_t: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RefQSilk {
    pub q_lo: f64,
    pub q_hi: f64,
    pub alpha_max: f64,
    pub tail_fraction: f64,
    pub sigma_detail: f64,
    pub edge_strength: f64,
}

impl Default for RefQSilk {
    fn default() -> Self {
        Self {
            q_lo: 0.001,
            q_hi: 0.999,
            alpha_max: 0.08,
            tail_fraction: 0.2,
            sigma_detail: 1.0,
            edge_strength: 1.0,
        }
    }
}

/// Whole sampler in `f64`: guidance, clamp, tail injection, Euler.
pub fn full_run(
    x_init: &[f64],
    tc: &[f64],
    tu: &[f64],
    d: Dims,
    sigmas: &[f64],
    p: &RefParams,
    q: &RefQSilk,
) -> RefRunOut {
    let steps = sigmas.len() - 1;
    let inactive = (((1.0 - q.tail_fraction) * steps as f64 - 1e-9).ceil() as usize).min(steps - 1);
    let mut x = x_init.to_vec();
    let mut state = RefState::default();
    let mut out = RefRunOut { x: vec![], modes: vec![], r_hf: vec![], rho: vec![], alpha_t: vec![] };
    for i in 0..steps {
        let (sg, sn) = (sigmas[i], sigmas[i + 1]);
        let yc: Vec<f64> = x.iter().zip(tc).map(|(a, t)| (a - t) / sg).collect();
        let yu: Vec<f64> = x.iter().zip(tu).map(|(a, t)| (a - t) / sg).collect();
        let st = guidance_step(&yc, &yu, d, p, state, None, None);
        state = st.state;
        let x0: Vec<f64> = x.iter().zip(&st.y).map(|(a, y)| a - sg * y).collect();
        let (mut x0, _) = qclamp(&x0, d, q.q_lo, q.q_hi);
        let alpha = if i < inactive {
            0.0
        } else {
            let u = (i + 1 - inactive) as f64 / (steps - inactive) as f64;
            q.alpha_max * (3.0 * u * u - 2.0 * u * u * u)
        };
        if alpha > 0.0 {
            x0 = inject(&x0, d, alpha, q.sigma_detail, q.edge_strength, None);
        }
        x = x0.iter().zip(&st.y).map(|(a, y)| a + sn * y).collect();
        out.modes.push(st.mode);
        out.r_hf.push(st.r_hf);
        out.rho.push(state.rho);
        out.alpha_t.push(alpha);
    }
    out.x = x;
    out
}

/// Deterministic xorshift-based generator for oracle-side random inputs.
pub struct XorShift(u64);

impl XorShift {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
    }

    pub fn vec_f32(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f32> {
        (0..len).map(|_| self.uniform(lo, hi) as f32).collect()
    }
}
