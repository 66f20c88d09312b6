//! Exact proximity operator of the 1-d total variation `sum |w[i+1] - w[i]|`.
//!
//! Direct (non-iterative) algorithm that sweeps the signal once, maintaining
//! bounds on the value of the current constant segment together with the
//! running dual variable, and backtracks to the last admissible jump position
//! whenever the dual leaves `[-lambda, lambda]`. Segments are written with a
//! single value so the output is exactly piecewise constant.

/// `argmin_u  lambda * TV(u) + 1/2 |u - input|^2`.
pub fn prox_tv1d(input: &[f64], lambda: f64) -> Vec<f64> {
    let n = input.len();
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    if lambda <= 0.0 {
        out.copy_from_slice(input);
        return out;
    }

    // k: current sample, k0: start of the current segment,
    // kplus / kminus: last positions where umax = -lambda / umin = lambda.
    let (mut k, mut k0, mut kplus, mut kminus) = (0usize, 0usize, 0usize, 0usize);
    let mut umin = lambda;
    let mut umax = -lambda;
    let mut vmin = input[0] - lambda;
    let mut vmax = input[0] + lambda;

    loop {
        while k == n - 1 {
            if umin < 0.0 {
                // vmin too high: negative jump
                fill(&mut out, &mut k0, kminus, vmin);
                k = k0;
                kminus = k0;
                vmin = input[k];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                // vmax too low: positive jump
                fill(&mut out, &mut k0, kplus, vmax);
                k = k0;
                kplus = k0;
                vmax = input[k];
                umax = -lambda;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                fill(&mut out, &mut k0, k, vmin);
                polish(input, lambda, &mut out);
                return out;
            }
        }

        umin += input[k + 1] - vmin;
        if umin < -lambda {
            fill(&mut out, &mut k0, kminus, vmin);
            k = k0;
            kminus = k0;
            kplus = k0;
            vmin = input[k];
            vmax = vmin + 2.0 * lambda;
            umin = lambda;
            umax = -lambda;
            continue;
        }
        umax += input[k + 1] - vmax;
        if umax > lambda {
            fill(&mut out, &mut k0, kplus, vmax);
            k = k0;
            kminus = k0;
            kplus = k0;
            vmax = input[k];
            vmin = vmax - 2.0 * lambda;
            umin = lambda;
            umax = -lambda;
            continue;
        }

        k += 1;
        if umin >= lambda {
            kminus = k;
            vmin += (umin - lambda) / (kminus - k0 + 1) as f64;
            umin = lambda;
        }
        if umax <= -lambda {
            kplus = k;
            vmax += (umax + lambda) / (kplus - k0 + 1) as f64;
            umax = -lambda;
        }
    }
}

/// Recomputes each constant run from the optimality conditions
/// `u = x - lambda Dᵀs`: the run mean shifted by the signs of its two
/// boundary jumps. Constant inputs come back exactly.
fn polish(input: &[f64], lambda: f64, out: &mut [f64]) {
    let n = out.len();
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || out[i] != out[start] {
            runs.push((start, i));
            start = i;
        }
    }
    let sign = |a: f64, b: f64| if b > a { 1.0 } else { -1.0 };
    let mut values = Vec::with_capacity(runs.len());
    for (r, &(a, b)) in runs.iter().enumerate() {
        let seg = &input[a..b];
        let mean = if seg.iter().all(|&v| v == seg[0]) {
            seg[0]
        } else {
            seg.iter().sum::<f64>() / seg.len() as f64
        };
        let left = if r > 0 { sign(out[a - 1], out[a]) } else { 0.0 };
        let right = if r + 1 < runs.len() { sign(out[a], out[b]) } else { 0.0 };
        let shift = lambda * (right - left) / seg.len() as f64;
        values.push(mean + shift);
    }
    // keep the incremental values if the recomputation would reorder a jump
    for r in 1..runs.len() {
        if sign(values[r - 1], values[r]) != sign(out[runs[r - 1].0], out[runs[r].0]) || values[r - 1] == values[r] {
            return;
        }
    }
    for (&(a, b), &v) in runs.iter().zip(&values) {
        out[a..b].fill(v);
    }
}

/// Writes `value` to `out[*k0..=last]` and advances `k0` past it.
fn fill(out: &mut [f64], k0: &mut usize, last: usize, value: f64) {
    loop {
        out[*k0] = value;
        *k0 += 1;
        if *k0 > last {
            break;
        }
    }
}
