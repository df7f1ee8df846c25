//! Row-major snapshot of a dataset for the least-squares composition steps,
//! which sweep all observations hundreds of times inside their optimizers.

use crate::model::LongitudinalDataset;

pub(crate) struct FlatData {
    pub n_obs: usize,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub px: usize,
    pub pz: usize,
    pub pw: usize,
    /// half-open observation ranges per individual
    pub spans: Vec<(usize, usize)>,
}

impl FlatData {
    pub fn new(ds: &LongitudinalDataset) -> Self {
        let (px, pz, pw) = ds.covariate_dims();
        let n_obs = ds.n_obs_total();
        let mut y = Vec::with_capacity(n_obs);
        let mut x = Vec::with_capacity(n_obs * px);
        let mut z = Vec::with_capacity(n_obs * pz);
        let mut w = Vec::with_capacity(n_obs * pw);
        let mut spans = Vec::with_capacity(ds.n_individuals());
        for rec in ds.records() {
            let start = y.len();
            for j in 0..rec.n_obs() {
                y.push(rec.y[j]);
                for k in 0..px {
                    x.push(rec.x[(j, k)]);
                }
                for k in 0..pz {
                    z.push(rec.z[(j, k)]);
                }
                for k in 0..pw {
                    w.push(rec.w[(j, k)]);
                }
            }
            spans.push((start, y.len()));
        }
        Self { n_obs, y, x, z, w, px, pz, pw, spans }
    }

    #[inline]
    pub fn x_row(&self, j: usize) -> &[f64] {
        &self.x[j * self.px..(j + 1) * self.px]
    }

    #[inline]
    pub fn z_row(&self, j: usize) -> &[f64] {
        &self.z[j * self.pz..(j + 1) * self.pz]
    }

    #[inline]
    pub fn w_row(&self, j: usize) -> &[f64] {
        &self.w[j * self.pw..(j + 1) * self.pw]
    }
}
