//! Oracle checks shared by the integration tests and the acceptance harness.
//! Each returns a short summary on success and a description of the first
//! mismatch otherwise.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use spacenet::experiment::{acc_metric, bwt_metric, AccuracyMatrix};
use spacenet::seed;
use spacenet::tensor::{
    affine_weight_grads, conv2d_backward, conv2d_forward, masked_softmax_xent, maxpool2x2_backward,
    maxpool2x2_forward, relu, relu_backward, sparse_affine_backward, sparse_affine_forward, ConvShape,
    SparseWeights,
};
use spacenet::topology::{accumulate_importance, drop_weakest, grow_topk, LayerLedger};
use spacenet::{ConnectionSet, Coord, GradBuffer, Matrix, OccupancyGrid};

pub type Check = Result<String, String>;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn rand_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn random_coords(rng: &mut impl Rng, rows: u32, cols: u32, n: usize) -> Vec<Coord> {
    let mut all: Vec<Coord> = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
    all.shuffle(rng);
    all.truncate(n);
    all.sort_unstable();
    all
}

/// Central difference of `f` with respect to `x[k]`.
fn central(x: &mut [f64], k: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[k];
    x[k] = orig + H;
    let up = f(x);
    x[k] = orig - H;
    let down = f(x);
    x[k] = orig;
    (up - down) / (2.0 * H)
}

struct Worst(f64);

impl Worst {
    fn see(&mut self, what: &str, case: u64, a: f64, n: f64) -> Result<(), String> {
        let e = rel_err(a, n);
        self.0 = self.0.max(e);
        if e > TOL {
            return Err(format!("{what} case {case}: analytic {a} vs numeric {n} (rel {e:.2e})"));
        }
        Ok(())
    }
}

/// Random 5-connection layers: weight and input gradients of `Σ up ⊙ (x·W)`.
pub fn fd_affine(cases: u64) -> Check {
    let mut worst = Worst(0.0);
    for case in 0..cases {
        let mut rng = seed::rng(1000 + case);
        let (fi, fo) = (rng.gen_range(2..6u32), rng.gen_range(2..6u32));
        let coords = random_coords(&mut rng, fi, fo, 5.min((fi * fo) as usize));
        let mut w: Vec<f64> = coords.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = rand_matrix(&mut rng, 3, fi as usize);
        let up = rand_matrix(&mut rng, 3, fo as usize);
        let (g, gi) = sparse_affine_backward(&up, &x, &[SparseWeights::new(&coords, &w, 1)]).unwrap();
        for k in 0..w.len() {
            let n = central(&mut w, k, |w| {
                dot(&up, &sparse_affine_forward(&x, &[SparseWeights::new(&coords, w, 1)], fo as usize, 1).unwrap())
            });
            worst.see("affine weight", case, g[0].values[k], n)?;
        }
        let mut xv = x.data().to_vec();
        for k in 0..xv.len() {
            let n = central(&mut xv, k, |xv| {
                let xm = Matrix::from_vec(3, fi as usize, xv.to_vec()).unwrap();
                dot(&up, &sparse_affine_forward(&xm, &[SparseWeights::new(&coords, &w, 1)], fo as usize, 1).unwrap())
            });
            worst.see("affine input", case, gi.data()[k], n)?;
        }
    }
    Ok(format!("{cases} cases, max rel err {:.2e}", worst.0))
}

/// Pre-activations kept at least 1e-2 from the kink.
pub fn fd_relu(cases: u64) -> Check {
    let mut worst = Worst(0.0);
    for case in 0..cases {
        let mut rng = seed::rng(2000 + case);
        let mut pre: Vec<f64> = (0..12)
            .map(|_| {
                let v: f64 = rng.gen_range(0.01..1.0);
                if rng.gen_bool(0.5) { v } else { -v }
            })
            .collect();
        let up = rand_matrix(&mut rng, 2, 6);
        let pm = Matrix::from_vec(2, 6, pre.clone()).unwrap();
        let g = relu_backward(&up, &pm);
        for k in 0..pre.len() {
            let n = central(&mut pre, k, |p| dot(&up, &relu(&Matrix::from_vec(2, 6, p.to_vec()).unwrap())));
            worst.see("relu", case, g.data()[k], n)?;
        }
    }
    Ok(format!("{cases} cases, max rel err {:.2e}", worst.0))
}

/// Sparse kernel sets over small maps: kernel and input gradients.
pub fn fd_conv(cases: u64) -> Check {
    let mut worst = Worst(0.0);
    for case in 0..cases {
        let mut rng = seed::rng(3000 + case);
        let kernel = if rng.gen_bool(0.5) { 3 } else { 1 };
        let shape = ConvShape {
            in_maps: rng.gen_range(1..3),
            out_maps: rng.gen_range(1..3),
            height: rng.gen_range(3..6),
            width: rng.gen_range(3..6),
            kernel,
        };
        let total = shape.in_maps * shape.out_maps;
        let count = rng.gen_range(1..=total);
        let coords = random_coords(&mut rng, shape.in_maps as u32, shape.out_maps as u32, count);
        let block = kernel * kernel;
        let mut w: Vec<f64> = (0..coords.len() * block).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let plane = shape.height * shape.width;
        let x = rand_matrix(&mut rng, 2, shape.in_maps * plane);
        let up = rand_matrix(&mut rng, 2, shape.out_maps * plane);
        let (g, gi) = conv2d_backward(&up, &x, &[SparseWeights::new(&coords, &w, block)], shape).unwrap();
        for k in 0..w.len() {
            let n = central(&mut w, k, |w| {
                dot(&up, &conv2d_forward(&x, &[SparseWeights::new(&coords, w, block)], shape, 1).unwrap())
            });
            worst.see("conv kernel", case, g[0].values[k], n)?;
        }
        let mut xv = x.data().to_vec();
        for k in 0..xv.len() {
            let n = central(&mut xv, k, |xv| {
                let xm = Matrix::from_vec(2, x.cols(), xv.to_vec()).unwrap();
                dot(&up, &conv2d_forward(&xm, &[SparseWeights::new(&coords, &w, block)], shape, 1).unwrap())
            });
            worst.see("conv input", case, gi.data()[k], n)?;
        }
    }
    Ok(format!("{cases} cases, max rel err {:.2e}", worst.0))
}

/// 2×2 max pooling on inputs whose window entries differ by more than 2h.
pub fn fd_pool(cases: u64) -> Check {
    let mut worst = Worst(0.0);
    for case in 0..cases {
        let mut rng = seed::rng(4000 + case);
        let (maps, h, w) = (rng.gen_range(1..3), 2 * rng.gen_range(1..3), 2 * rng.gen_range(1..3));
        let n = maps * h * w;
        // A shuffled grid of well-separated values rules out near-ties.
        let mut x: Vec<f64> = (0..2 * n).map(|v| v as f64 * 0.01).collect();
        x.shuffle(&mut rng);
        let xm = Matrix::from_vec(2, n, x.clone()).unwrap();
        let (pooled, arg) = maxpool2x2_forward(&xm, maps, h, w).unwrap();
        let up = rand_matrix(&mut rng, 2, pooled.cols());
        let g = maxpool2x2_backward(&up, &arg, n).unwrap();
        for k in 0..x.len() {
            let num = central(&mut x, k, |x| {
                let xm = Matrix::from_vec(2, n, x.to_vec()).unwrap();
                dot(&up, &maxpool2x2_forward(&xm, maps, h, w).unwrap().0)
            });
            worst.see("pool", case, g.data()[k], num)?;
        }
    }
    Ok(format!("{cases} cases, max rel err {:.2e}", worst.0))
}

/// Softmax cross-entropy over a random subset of the logits.
pub fn fd_masked_softmax(cases: u64) -> Check {
    let mut worst = Worst(0.0);
    for case in 0..cases {
        let mut rng = seed::rng(5000 + case);
        let cols = rng.gen_range(2..8u32);
        let mut all: Vec<u32> = (0..cols).collect();
        all.shuffle(&mut rng);
        let active: Vec<u32> = all[..rng.gen_range(1..=cols as usize)].to_vec();
        let rows = 3;
        let labels: Vec<u32> = (0..rows).map(|_| *active.choose(&mut rng).unwrap()).collect();
        let mut z: Vec<f64> = (0..rows * cols as usize).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let zm = Matrix::from_vec(rows, cols as usize, z.clone()).unwrap();
        let (_, g) = masked_softmax_xent(&zm, &active, &labels).unwrap();
        for k in 0..z.len() {
            let n = central(&mut z, k, |z| {
                let zm = Matrix::from_vec(rows, cols as usize, z.to_vec()).unwrap();
                masked_softmax_xent(&zm, &active, &labels).unwrap().0
            });
            if g.data()[k] == 0.0 && n == 0.0 {
                continue;
            }
            worst.see("masked softmax", case, g.data()[k], n)?;
        }
    }
    Ok(format!("{cases} cases, max rel err {:.2e}", worst.0))
}

/// Gradients accumulated through a random multi-set layer agree with the
/// per-set gradients (frozen sets still pass input gradient through).
pub fn affine_union_grads(cases: u64) -> Check {
    for case in 0..cases {
        let mut rng = seed::rng(6000 + case);
        let a = random_coords(&mut rng, 4, 4, 5);
        let b: Vec<Coord> = random_coords(&mut rng, 4, 4, 8).into_iter().filter(|c| !a.contains(c)).collect();
        let va: Vec<f64> = a.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vb: Vec<f64> = b.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = rand_matrix(&mut rng, 2, 4);
        let up = rand_matrix(&mut rng, 2, 4);
        let wa = SparseWeights::new(&a, &va, 1);
        let (g, _) = sparse_affine_backward(&up, &x, &[wa, SparseWeights::new(&b, &vb, 1)]).unwrap();
        if g[0] != affine_weight_grads(&up, &x, wa).unwrap() {
            return Err(format!("case {case}: union gradient differs from single-set gradient"));
        }
    }
    Ok(format!("{cases} cases"))
}

fn ledger_with(set: &ConnectionSet, omega: &[f32]) -> LayerLedger {
    let mut l = LayerLedger::for_set(set);
    accumulate_importance(&mut l, &GradBuffer { values: omega.to_vec() }, &vec![1.0; omega.len()]).unwrap();
    l
}

/// Values from a small palette so ties are common.
fn tied(rng: &mut impl Rng) -> f32 {
    [0.0, 0.25, 0.5, 1.0][rng.gen_range(0..4)]
}

/// drop_weakest against a full sort by (Ω, coordinate).
pub fn drop_oracle(instances: u64) -> Check {
    let mut ties = 0;
    for case in 0..instances {
        let mut rng = seed::rng(7000 + case);
        let (rows, cols) = (rng.gen_range(1..=20u32), rng.gen_range(1..=20u32));
        let n = rng.gen_range(1..=(rows * cols) as usize);
        let coords = random_coords(&mut rng, rows, cols, n);
        let omega: Vec<f32> = coords.iter().map(|_| tied(&mut rng)).collect();
        let r = rng.gen_range(0.05..0.95);
        let mut set = ConnectionSet::new(0, 1, 1, coords.clone(), vec![0.5; n]).unwrap();
        let mut ledger = ledger_with(&set, &omega);
        let got = drop_weakest(&mut set, &mut ledger, r).unwrap();

        let mut order: Vec<(f32, Coord)> = omega.iter().copied().zip(coords.iter().copied()).collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let k = (r * n as f64 + 1e-9).floor() as usize;
        if k > 0 && k < n && order[k - 1].0 == order[k].0 {
            ties += 1;
        }
        let mut want: Vec<Coord> = order[..k].iter().map(|p| p.1).collect();
        want.sort_unstable();
        if got != want {
            return Err(format!("drop case {case}: got {got:?}, oracle {want:?}"));
        }
        let kept: Vec<Coord> = coords.iter().copied().filter(|c| !want.contains(c)).collect();
        if set.coords() != kept.as_slice() {
            return Err(format!("drop case {case}: surviving coordinates differ"));
        }
    }
    Ok(format!("{instances} instances, {ties} with a tie at the cut"))
}

/// grow_topk against enumeration of every allowed free cell.
pub fn grow_oracle(instances: u64) -> Check {
    let mut ties = 0;
    let mut short = 0;
    for case in 0..instances {
        let mut rng = seed::rng(8000 + case);
        let (rows, cols) = (rng.gen_range(1..=20u32), rng.gen_range(1..=20u32));
        let count = rng.gen_range(0..=(rows * cols) as usize);
        let taken = random_coords(&mut rng, rows, cols, count);
        let set = ConnectionSet::new(0, 1, 1, taken.clone(), vec![0.0; taken.len()]).unwrap();
        let occ = OccupancyGrid::from_sets(rows as usize, cols as usize, [&set]).unwrap();
        let a_prev: Vec<f64> = (0..rows).map(|_| tied(&mut rng) as f64).collect();
        let a_cur: Vec<f64> = (0..cols).map(|_| tied(&mut rng) as f64).collect();
        let mut allowed_rows: Vec<u32> = (0..rows).filter(|_| rng.gen_bool(0.7)).collect();
        let mut allowed_cols: Vec<u32> = (0..cols).filter(|_| rng.gen_bool(0.7)).collect();
        allowed_rows.shuffle(&mut rng);
        allowed_cols.shuffle(&mut rng);
        let k = rng.gen_range(0..=30);
        let got = grow_topk(&a_prev, &a_cur, k, &occ, &allowed_rows, &allowed_cols);

        let mut cells = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                if allowed_rows.contains(&i) && allowed_cols.contains(&j) && !taken.contains(&(i, j)) {
                    cells.push((a_prev[i as usize] * a_cur[j as usize], (i, j)));
                }
            }
        }
        cells.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        if k > 0 && k < cells.len() && cells[k - 1].0 == cells[k].0 {
            ties += 1;
        }
        let want: Vec<Coord> = cells.iter().take(k).map(|c| c.1).collect();
        let want_short = k.saturating_sub(cells.len());
        if want_short > 0 {
            short += 1;
        }
        if got.coords != want || got.shortfall != want_short {
            return Err(format!(
                "grow case {case}: got {:?} (short {}), oracle {want:?} (short {want_short})",
                got.coords, got.shortfall
            ));
        }
    }
    Ok(format!("{instances} instances, {ties} with a tie at the cut, {short} short"))
}

/// ACC and BWT on random 5×5 lower-triangular matrices, recomputed from a
/// flat row-major copy.
pub fn metric_oracle(instances: u64) -> Check {
    let mut worst = 0.0f64;
    for case in 0..instances {
        let mut rng = seed::rng(9000 + case);
        let t = 5;
        let mut flat = vec![0.0f64; t * t];
        let mut rows = Vec::new();
        for j in 0..t {
            let row: Vec<f64> = (0..=j).map(|_| rng.gen_range(0.0..=100.0)).collect();
            for (i, &v) in row.iter().enumerate() {
                flat[j * t + i] = v;
            }
            rows.push(row);
        }
        let m = AccuracyMatrix::from_rows(rows).map_err(|e| e.to_string())?;
        let mut acc = 0.0;
        for i in 0..t {
            acc += flat[(t - 1) * t + i];
        }
        acc /= t as f64;
        let mut bwt = 0.0;
        for i in 0..t - 1 {
            bwt += flat[(t - 1) * t + i] - flat[i * t + i];
        }
        bwt /= (t - 1) as f64;
        let got_acc = acc_metric(&m).ok_or("ACC missing")?;
        let got_bwt = bwt_metric(&m).ok_or("BWT missing")?;
        let err = (got_acc - acc).abs().max((got_bwt - bwt).abs());
        worst = worst.max(err);
        if err > 1e-12 {
            return Err(format!("case {case}: ACC {got_acc} vs {acc}, BWT {got_bwt} vs {bwt}"));
        }
    }
    let single = AccuracyMatrix::from_rows(vec![vec![87.5]]).map_err(|e| e.to_string())?;
    if bwt_metric(&single).is_some() {
        return Err("BWT reported for a single task".into());
    }
    if acc_metric(&single) != Some(87.5) {
        return Err("ACC wrong for a single task".into());
    }
    Ok(format!("{instances} matrices, max abs err {worst:.1e}; T=1 BWT n/a"))
}
