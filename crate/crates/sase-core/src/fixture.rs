//! JSON fixtures for channels and observations, used by golden tests.
//! Complex matrices are stored row-major as `[re, im]` pairs.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelInstance, PathSet};
use crate::error::{Result, SaseError};
use crate::linalg::C64;
use crate::sounding::{StageOneObservation, StageTwoObservation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFixture {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `[re, im]` entries.
    pub data: Vec<[f64; 2]>,
}

impl MatrixFixture {
    pub fn from_matrix(a: &ArrayView2<C64>) -> Self {
        let (rows, cols) = a.dim();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push([a[[i, j]].re, a[[i, j]].im]);
            }
        }
        Self { rows, cols, data }
    }

    pub fn to_matrix(&self) -> Result<Array2<C64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(SaseError::ShapeMismatch(format!(
                "fixture claims {}x{} but carries {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        let mut out = Array2::<C64>::zeros((self.rows, self.cols));
        for i in 0..self.rows {
            for j in 0..self.cols {
                let [re, im] = self.data[i * self.cols + j];
                out[[i, j]] = Complex64::new(re, im);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFixture {
    pub matrix: MatrixFixture,
    pub paths: PathSet,
    pub true_left: MatrixFixture,
    pub true_singulars: Vec<f64>,
    pub true_right: MatrixFixture,
}

impl ChannelFixture {
    pub fn from_channel(ch: &ChannelInstance) -> Self {
        Self {
            matrix: MatrixFixture::from_matrix(&ch.matrix()),
            paths: ch.paths().clone(),
            true_left: MatrixFixture::from_matrix(&ch.true_left()),
            true_singulars: ch.true_singulars().to_vec(),
            true_right: MatrixFixture::from_matrix(&ch.true_right()),
        }
    }

    /// Rebuild the channel, revalidating the cached factorization.
    pub fn into_channel(self) -> Result<ChannelInstance> {
        ChannelInstance::from_parts(
            self.matrix.to_matrix()?,
            self.paths,
            self.true_left.to_matrix()?,
            ndarray::Array1::from_vec(self.true_singulars),
            self.true_right.to_matrix()?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneFixture {
    pub y_post_dft: MatrixFixture,
    pub m: usize,
    pub channel_uses: usize,
}

impl StageOneFixture {
    pub fn from_observation(obs: &StageOneObservation) -> Self {
        Self {
            y_post_dft: MatrixFixture::from_matrix(&obs.y_post_dft.view()),
            m: obs.m,
            channel_uses: obs.channel_uses,
        }
    }

    pub fn into_observation(self) -> Result<StageOneObservation> {
        Ok(StageOneObservation {
            y_post_dft: self.y_post_dft.to_matrix()?,
            m: self.m,
            channel_uses: self.channel_uses,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTwoFixture {
    pub q_c: MatrixFixture,
    pub channel_uses: usize,
}

impl StageTwoFixture {
    pub fn from_observation(obs: &StageTwoObservation) -> Self {
        Self {
            q_c: MatrixFixture::from_matrix(&obs.q_c.view()),
            channel_uses: obs.channel_uses,
        }
    }

    pub fn into_observation(self) -> Result<StageTwoObservation> {
        Ok(StageTwoObservation { q_c: self.q_c.to_matrix()?, channel_uses: self.channel_uses })
    }
}
