use crate::adp::{adp_from_csi, Adp, DftPair};
use crate::channel::{synthesize_csi, trace_paths, ArrayConfig, OfdmConfig, Path, Trace};
use crate::environment::Environment;
use crate::error::Result;
use crate::geometry::Vec2;

/// An environment together with the radio configuration observing it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub env: Environment,
    pub array: ArrayConfig,
    pub ofdm: OfdmConfig,
    dft: DftPair,
}

impl Scene {
    pub fn new(env: Environment, array: ArrayConfig, ofdm: OfdmConfig) -> Result<Self> {
        env.validate()?;
        array.validate()?;
        ofdm.validate()?;
        let dft = DftPair::new(array.n_antennas, ofdm.n_subcarriers);
        Ok(Self {
            env,
            array,
            ofdm,
            dft,
        })
    }

    pub fn dft(&self) -> &DftPair {
        &self.dft
    }

    pub fn adp_dims(&self) -> (usize, usize) {
        (self.array.n_antennas, self.ofdm.n_subcarriers)
    }

    pub fn trace(&self, user: Vec2) -> Result<Trace> {
        trace_paths(&self.env, user, &self.array, &self.ofdm)
    }

    /// Profile of an explicit path set, at storage precision.
    pub fn adp_of(&self, paths: &[Path]) -> Result<Adp> {
        let csi = synthesize_csi(paths, &self.array, &self.ofdm)?;
        Ok(adp_from_csi(&csi, &self.dft)?.quantized())
    }

    pub fn adp_at(&self, user: Vec2) -> Result<Adp> {
        self.adp_of(&self.trace(user)?.paths)
    }
}
