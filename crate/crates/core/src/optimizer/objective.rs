//! `tr[AᵀA X⁻¹]` and its band-restricted gradient for banded `X`.
//!
//! With `X = L Lᵀ` (banded Cholesky), the loss is `‖L⁻¹Aᵀ‖_F²` and the
//! gradient `−X⁻¹AᵀA X⁻¹ = −U Uᵀ` with `U = L⁻ᵀ L⁻¹ Aᵀ`. Only the entries of
//! the gradient inside the band are ever needed, so one evaluation costs
//! `O(n² b̂)` instead of `O(n³)`.
//!
//! The columns of `Aᵀ` are split into fixed-width blocks, and blocks are
//! assigned to a fixed number of groups. Groups may run in parallel; their
//! partial sums are always combined in group order, so results do not depend
//! on thread scheduling.

use crate::banded::BandedLowerTriangular;
use crate::dense::DenseMatrix;
use crate::exec::Execution;

const BLOCK_WIDTH: usize = 64;
const GROUPS: usize = 8;

pub(crate) struct BandedObjective {
    n: usize,
    bands: usize,
    blocks: Vec<(usize, Vec<f64>)>,
    exec: Execution,
}

impl BandedObjective {
    pub(crate) fn new(a: &DenseMatrix, bands: usize, exec: Execution) -> Self {
        let n = a.rows();
        let mut blocks = Vec::new();
        let mut start = 0;
        while start < n {
            let w = BLOCK_WIDTH.min(n - start);
            // block = Aᵀ[:, start..start+w], i.e. rows start.. of A transposed
            let mut data = vec![0.0; n * w];
            for c in 0..w {
                let arow = a.row(start + c);
                for (r, &v) in arow.iter().enumerate() {
                    data[r * w + c] = v;
                }
            }
            blocks.push((w, data));
            start += w;
        }
        Self {
            n,
            bands,
            blocks,
            exec,
        }
    }

    fn group_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let nb = self.blocks.len();
        let g = GROUPS.min(nb).max(1);
        (0..g).map(|k| (k * nb / g)..((k + 1) * nb / g)).collect()
    }

    /// `tr[AᵀA X⁻¹]` given the Cholesky factor of `X`.
    pub(crate) fn loss(&self, chol: &BandedLowerTriangular) -> f64 {
        debug_assert_eq!(chol.n(), self.n);
        let ranges = self.group_ranges();
        let partials = self.exec.map_slice(&ranges, |range| {
            let mut acc = vec![0.0; BLOCK_WIDTH];
            let mut total = 0.0;
            for (w, rhs) in &self.blocks[range.clone()] {
                let mut v = rhs.clone();
                chol.solve_rows_unchecked(&mut v, *w, &mut acc[..*w]);
                total += v.iter().map(|x| x * x).sum::<f64>();
            }
            total
        });
        partials.into_iter().sum()
    }

    /// Loss and the lower band (compact `n × bands`, same layout as
    /// [`BandedLowerTriangular`]) of the gradient `−X⁻¹AᵀAX⁻¹`.
    pub(crate) fn loss_and_grad(&self, chol: &BandedLowerTriangular) -> (f64, Vec<f64>) {
        let (n, b) = (self.n, self.bands);
        let ranges = self.group_ranges();
        let partials = self.exec.map_slice(&ranges, |range| {
            let mut acc = vec![0.0; BLOCK_WIDTH];
            let mut total = 0.0;
            let mut grad = vec![0.0; n * b];
            for (w, rhs) in &self.blocks[range.clone()] {
                let w = *w;
                let mut v = rhs.clone();
                chol.solve_rows_unchecked(&mut v, w, &mut acc[..w]);
                total += v.iter().map(|x| x * x).sum::<f64>();
                chol.solve_transpose_rows_unchecked(&mut v, w, &mut acc[..w]);
                for i in 0..n {
                    let ui = &v[i * w..(i + 1) * w];
                    let lo = (i + 1).saturating_sub(b);
                    for j in lo..=i {
                        let uj = &v[j * w..(j + 1) * w];
                        let dot: f64 = ui.iter().zip(uj).map(|(p, q)| p * q).sum();
                        grad[i * b + b - 1 - (i - j)] -= dot;
                    }
                }
            }
            (total, grad)
        });
        let mut loss = 0.0;
        let mut grad = vec![0.0; n * b];
        for (l, g) in partials {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, x)| *a += x);
        }
        (loss, grad)
    }
}
