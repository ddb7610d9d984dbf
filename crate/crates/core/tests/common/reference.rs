//! Straight-line versions of the level block, written with plain loops over
//! row-major slices and no shared code with the library.

pub type Mat = Vec<Vec<f64>>;

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn to_mat(data: &[f64], rows: usize, cols: usize) -> Mat {
    (0..rows).map(|i| data[i * cols..(i + 1) * cols].to_vec()).collect()
}

pub fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + eps).sqrt() * gain[j] + bias[j])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub struct MhaWeights<'a> {
    pub wq: &'a Mat,
    pub wk: &'a Mat,
    pub wv: &'a Mat,
    pub wo: &'a Mat,
}

/// One sequence `[l, d]`; head `h` uses columns `h·dk .. (h+1)·dk`.
pub fn attention(x: &Mat, w: &MhaWeights, heads: usize, mask: &[bool]) -> Mat {
    let (l, d) = (x.len(), x[0].len());
    let dk = d / heads;
    let (q, k, v) = (matmul(x, w.wq), matmul(x, w.wk), matmul(x, w.wv));
    let mut ctx = vec![vec![0.0; d]; l];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        for i in 0..l {
            let scores: Vec<f64> = (0..l)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let max = (0..l).filter(|&j| mask[j]).map(|j| scores[j]).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..l)
                .map(|j| if mask[j] { (scores[j] - max).exp() } else { 0.0 })
                .collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                ctx[i][c] = (0..l).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    matmul(&ctx, w.wo)
}

pub struct GrnWeights<'a> {
    pub gamma: Option<&'a [f64]>,
    pub w1: &'a Mat,
    pub b1: &'a [f64],
    pub w2: &'a Mat,
    pub b2: &'a [f64],
    pub gain: &'a [f64],
    pub bias: &'a [f64],
}

pub fn grn(x: &Mat, w: &GrnWeights, eps: f64) -> Mat {
    let mut h = matmul(x, w.w1);
    for row in &mut h {
        for (j, v) in row.iter_mut().enumerate() {
            *v = gelu(*v + w.b1[j]);
        }
    }
    let mut f = matmul(&h, w.w2);
    for (i, row) in f.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let g = w.gamma.map_or(1.0, |g| g[j]);
            *v = g * (*v + w.b2[j]) + x[i][j];
        }
    }
    layer_norm(&f, w.gain, w.bias, eps)
}

pub fn masked_mean(x: &Mat, mask: &[bool]) -> Vec<f64> {
    let d = x[0].len();
    let n = mask.iter().filter(|&&m| m).count() as f64;
    (0..d)
        .map(|c| x.iter().zip(mask).filter(|(_, &m)| m).map(|(r, _)| r[c]).sum::<f64>() / n)
        .collect()
}
