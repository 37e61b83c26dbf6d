//! Raw forward/backward kernels on NCHW slices. Shapes are validated by the
//! graph layer before these are called.

use super::scalar::{gemm, Mat, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the input plane already is the column matrix.
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<S: Real>(g: &ConvGeom, x: &[S], cols: &mut [S]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            S::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<S: Real>(g: &ConvGeom, cols: &[S], dx: &mut [S]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Column matrix `(k, n·p)` of the whole batch; sample `n` occupies columns
/// `n·p .. (n+1)·p`.
fn batch_cols<S: Real>(g: &ConvGeom, x: &[S]) -> Vec<S> {
    let (k, p) = (g.k(), g.p());
    let np = g.n * p;
    let mut cols = vec![S::zero(); k * np];
    let mut one = vec![S::zero(); k * p];
    let plane = g.cin * g.h * g.w;
    for n in 0..g.n {
        let xn = &x[n * plane..(n + 1) * plane];
        let src = if g.pointwise() {
            xn
        } else {
            im2col(g, xn, &mut one);
            &one[..]
        };
        for r in 0..k {
            cols[r * np + n * p..r * np + (n + 1) * p].copy_from_slice(&src[r * p..(r + 1) * p]);
        }
    }
    cols
}

pub(crate) fn conv_forward<S: Real>(g: &ConvGeom, x: &[S], w: &[S], b: Option<&[S]>, out: &mut [S]) {
    let (k, p) = (g.k(), g.p());
    let np = g.n * p;
    let cols = batch_cols(g, x);
    let mut tmp = vec![S::zero(); g.cout * np];
    gemm(
        S::one(),
        Mat::new(w, g.cout, k),
        Mat::new(&cols, k, np),
        S::zero(),
        &mut tmp,
    );
    for n in 0..g.n {
        for co in 0..g.cout {
            let bias = b.map_or(S::zero(), |b| b[co]);
            let dst = &mut out[(n * g.cout + co) * p..(n * g.cout + co + 1) * p];
            for (d, &v) in dst.iter_mut().zip(&tmp[co * np + n * p..co * np + (n + 1) * p]) {
                *d = v + bias;
            }
        }
    }
}

/// Accumulates (`+=`) gradients into whichever of `dx`, `dw`, `db` are given.
pub(crate) fn conv_backward<S: Real>(
    g: &ConvGeom,
    x: &[S],
    w: &[S],
    dy: &[S],
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    let (k, p) = (g.k(), g.p());
    let np = g.n * p;
    // dY rearranged to (cout, n·p).
    let mut dyt = vec![S::zero(); g.cout * np];
    for n in 0..g.n {
        for co in 0..g.cout {
            dyt[co * np + n * p..co * np + (n + 1) * p]
                .copy_from_slice(&dy[(n * g.cout + co) * p..(n * g.cout + co + 1) * p]);
        }
    }
    if let Some(db) = db {
        for (co, row) in dyt.chunks_exact(np).enumerate() {
            db[co] += row.iter().copied().sum::<S>();
        }
    }
    if let Some(dw) = dw {
        // A contiguous (n·p, k) copy packs much faster than a strided view
        // when the depth n·p is large.
        let cols = batch_cols(g, x);
        let mut cols_t = vec![S::zero(); np * k];
        for (r, row) in cols.chunks_exact(np).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                cols_t[j * k + r] = v;
            }
        }
        gemm(
            S::one(),
            Mat::new(&dyt, g.cout, np),
            Mat::new(&cols_t, np, k),
            S::one(),
            dw,
        );
    }
    if let Some(dx) = dx {
        let mut dcols = vec![S::zero(); k * np];
        gemm(
            S::one(),
            Mat::t(w, g.cout, k),
            Mat::new(&dyt, g.cout, np),
            S::zero(),
            &mut dcols,
        );
        let plane = g.cin * g.h * g.w;
        let mut one = vec![S::zero(); k * p];
        for n in 0..g.n {
            for r in 0..k {
                one[r * p..(r + 1) * p].copy_from_slice(&dcols[r * np + n * p..r * np + (n + 1) * p]);
            }
            let dxn = &mut dx[n * plane..(n + 1) * plane];
            if g.pointwise() {
                for (d, &v) in dxn.iter_mut().zip(&one) {
                    *d += v;
                }
            } else {
                col2im(g, &one, dxn);
            }
        }
    }
}

/// Geometry of a 2×2, stride-2 transposed convolution with kernel `(cin, cout, 2, 2)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DeconvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
}

pub(crate) fn deconv_forward<S: Real>(g: &DeconvGeom, x: &[S], k: &[S], b: Option<&[S]>, out: &mut [S]) {
    let hw = g.h * g.w;
    let rows = g.cout * 4;
    let (ho, wo) = (2 * g.h, 2 * g.w);
    let mut tmp = vec![S::zero(); rows * hw];
    for n in 0..g.n {
        let xn = &x[n * g.cin * hw..(n + 1) * g.cin * hw];
        // tmp[(co,a,b), (i,j)] = Σ_ci K[ci, (co,a,b)] · x[ci, (i,j)]
        gemm(
            S::one(),
            Mat::t(k, g.cin, rows),
            Mat::new(xn, g.cin, hw),
            S::zero(),
            &mut tmp,
        );
        let on = &mut out[n * g.cout * ho * wo..(n + 1) * g.cout * ho * wo];
        for co in 0..g.cout {
            let bias = b.map_or(S::zero(), |b| b[co]);
            for a in 0..2 {
                for bb in 0..2 {
                    let src = &tmp[(co * 4 + a * 2 + bb) * hw..(co * 4 + a * 2 + bb + 1) * hw];
                    for i in 0..g.h {
                        for j in 0..g.w {
                            on[(co * ho + 2 * i + a) * wo + 2 * j + bb] = src[i * g.w + j] + bias;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn deconv_backward<S: Real>(
    g: &DeconvGeom,
    x: &[S],
    k: &[S],
    dy: &[S],
    mut dx: Option<&mut [S]>,
    mut dk: Option<&mut [S]>,
    mut db: Option<&mut [S]>,
) {
    let hw = g.h * g.w;
    let rows = g.cout * 4;
    let (ho, wo) = (2 * g.h, 2 * g.w);
    let mut gathered = vec![S::zero(); rows * hw];
    for n in 0..g.n {
        let dyn_ = &dy[n * g.cout * ho * wo..(n + 1) * g.cout * ho * wo];
        for co in 0..g.cout {
            for a in 0..2 {
                for bb in 0..2 {
                    let dst = &mut gathered[(co * 4 + a * 2 + bb) * hw..(co * 4 + a * 2 + bb + 1) * hw];
                    for i in 0..g.h {
                        for j in 0..g.w {
                            dst[i * g.w + j] = dyn_[(co * ho + 2 * i + a) * wo + 2 * j + bb];
                        }
                    }
                }
            }
        }
        if let Some(db) = db.as_deref_mut() {
            for co in 0..g.cout {
                db[co] += gathered[co * 4 * hw..(co + 1) * 4 * hw].iter().copied().sum::<S>();
            }
        }
        let xn = &x[n * g.cin * hw..(n + 1) * g.cin * hw];
        if let Some(dk) = dk.as_deref_mut() {
            gemm(
                S::one(),
                Mat::new(xn, g.cin, hw),
                Mat::t(&gathered, rows, hw),
                S::one(),
                dk,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[n * g.cin * hw..(n + 1) * g.cin * hw];
            gemm(
                S::one(),
                Mat::new(k, g.cin, rows),
                Mat::new(&gathered, rows, hw),
                S::one(),
                dxn,
            );
        }
    }
}
