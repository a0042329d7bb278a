//! Single LSTM layer over a flat parameter slice, with exact BPTT.
//!
//! Gate order within the `4H` pre-activation is `[input, forget, candidate, output]`.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LstmLayout {
    pub input: usize,
    pub hidden: usize,
    /// `4H x input`, row-major.
    pub wx: usize,
    /// `4H x H`, row-major.
    pub wh: usize,
    /// `4H`.
    pub bias: usize,
}

impl LstmLayout {
    pub fn new(offset: usize, input: usize, hidden: usize) -> Self {
        let g = 4 * hidden;
        Self {
            input,
            hidden,
            wx: offset,
            wh: offset + g * input,
            bias: offset + g * input + g * hidden,
        }
    }

    pub fn end(&self) -> usize {
        self.bias + 4 * self.hidden
    }
}

/// Activations cached per frame, all row-major by frame.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LstmTrace {
    pub x: Vec<f64>,
    /// Post-activation gates, `T x 4H`.
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn forward(params: &[f64], lay: &LstmLayout, x: Vec<f64>, frames: usize) -> LstmTrace {
    let (n_in, h) = (lay.input, lay.hidden);
    let g4 = 4 * h;
    let wx = &params[lay.wx..lay.wh];
    let wh = &params[lay.wh..lay.bias];
    let bias = &params[lay.bias..lay.end()];

    let mut gates = vec![0.0; frames * g4];
    let mut c = vec![0.0; frames * h];
    let mut tanh_c = vec![0.0; frames * h];
    let mut hs = vec![0.0; frames * h];
    let zeros = vec![0.0; h];

    for t in 0..frames {
        let xt = &x[t * n_in..(t + 1) * n_in];
        let h_prev = if t == 0 {
            &zeros[..]
        } else {
            &hs[(t - 1) * h..t * h]
        };
        let pre = &mut gates[t * g4..(t + 1) * g4];
        for j in 0..g4 {
            pre[j] = bias[j]
                + dot(&wx[j * n_in..(j + 1) * n_in], xt)
                + dot(&wh[j * h..(j + 1) * h], h_prev);
        }
        for k in 0..h {
            pre[k] = sigmoid(pre[k]);
            pre[h + k] = sigmoid(pre[h + k]);
            pre[2 * h + k] = pre[2 * h + k].tanh();
            pre[3 * h + k] = sigmoid(pre[3 * h + k]);
        }
        for k in 0..h {
            let c_prev = if t == 0 { 0.0 } else { c[(t - 1) * h + k] };
            let ct = pre[h + k] * c_prev + pre[k] * pre[2 * h + k];
            let tc = ct.tanh();
            c[t * h + k] = ct;
            tanh_c[t * h + k] = tc;
            hs[t * h + k] = pre[3 * h + k] * tc;
        }
    }
    LstmTrace {
        x,
        gates,
        tanh_c,
        c,
        h: hs,
    }
}

/// Accumulates parameter gradients into `grads` given `dL/dh` from above for
/// every frame. Returns `dL/dx` when `want_dx`.
pub(crate) fn backward(
    params: &[f64],
    grads: &mut [f64],
    lay: &LstmLayout,
    trace: &LstmTrace,
    dh_above: &[f64],
    frames: usize,
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (n_in, h) = (lay.input, lay.hidden);
    let g4 = 4 * h;
    let wx = &params[lay.wx..lay.wh];
    let wh = &params[lay.wh..lay.bias];

    let mut dx = want_dx.then(|| vec![0.0; frames * n_in]);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da = vec![0.0; g4];
    let zeros = vec![0.0; h];

    for t in (0..frames).rev() {
        let gates = &trace.gates[t * g4..(t + 1) * g4];
        let c_prev = if t == 0 {
            &zeros[..]
        } else {
            &trace.c[(t - 1) * h..t * h]
        };
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let tc = trace.tanh_c[t * h + k];
            let dh = dh_above[t * h + k] + dh_next[k];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            dc_next[k] = dc * f;
            da[k] = dc * g * i * (1.0 - i);
            da[h + k] = dc * c_prev[k] * f * (1.0 - f);
            da[2 * h + k] = dc * i * (1.0 - g * g);
            da[3 * h + k] = d_o * o * (1.0 - o);
        }

        let xt = &trace.x[t * n_in..(t + 1) * n_in];
        let h_prev = if t == 0 {
            &zeros[..]
        } else {
            &trace.h[(t - 1) * h..t * h]
        };
        {
            let (gwx, rest) = grads[lay.wx..lay.end()].split_at_mut(g4 * n_in);
            let (gwh, gb) = rest.split_at_mut(g4 * h);
            for j in 0..g4 {
                let a = da[j];
                if a == 0.0 {
                    continue;
                }
                axpy(a, xt, &mut gwx[j * n_in..(j + 1) * n_in]);
                axpy(a, h_prev, &mut gwh[j * h..(j + 1) * h]);
                gb[j] += a;
            }
        }

        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..g4 {
            axpy(da[j], &wh[j * h..(j + 1) * h], &mut dh_next);
        }
        if let Some(dx) = dx.as_mut() {
            let dxt = &mut dx[t * n_in..(t + 1) * n_in];
            for j in 0..g4 {
                axpy(da[j], &wx[j * n_in..(j + 1) * n_in], dxt);
            }
        }
    }
    dx
}
