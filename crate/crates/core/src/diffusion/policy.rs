use super::{
    sample_normalized, DdimPlan, DiffusionError, GuidanceConfig, NoiseSchedule, PolicyParams,
    SampleMode, SampleRequest,
};
use crate::dataset::{ActionChunk, NormStats, ObservationWindow};

/// Trained denoiser together with everything needed to turn observations
/// into action chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub params: PolicyParams,
    pub stats: NormStats,
    pub schedule: NoiseSchedule,
    pub plan: DdimPlan,
    pub guidance: GuidanceConfig,
}

impl Policy {
    /// Samples one denormalized chunk per window. Returns the chunks and the
    /// λ used for each.
    pub fn sample_chunks(
        &self,
        windows: &[ObservationWindow],
        seeds: &[u64],
        guidance: &GuidanceConfig,
        mode: SampleMode,
    ) -> Result<(Vec<ActionChunk>, Vec<f64>), DiffusionError> {
        assert_eq!(windows.len(), seeds.len(), "one seed per window");
        let requests: Vec<SampleRequest> = windows
            .iter()
            .zip(seeds)
            .map(|(w, &seed)| SampleRequest {
                obs: self.stats.normalize_window(w).flat(),
                s_t: w.s_t,
                seed,
            })
            .collect();
        let out = sample_normalized(
            &self.params,
            &self.schedule,
            &self.plan,
            guidance,
            self.stats.s_mean,
            mode,
            &requests,
        )?;
        let chunks = out
            .chunks
            .iter()
            .map(|c| self.stats.denormalize_chunk(&ActionChunk::from_flat(c, true)))
            .collect();
        Ok((chunks, out.lambdas))
    }

    pub fn sample_chunk(
        &self,
        window: &ObservationWindow,
        guidance: &GuidanceConfig,
        mode: SampleMode,
        seed: u64,
    ) -> Result<(ActionChunk, f64), DiffusionError> {
        let (mut chunks, lambdas) = self.sample_chunks(&[*window], &[seed], guidance, mode)?;
        Ok((chunks.remove(0), lambdas[0]))
    }
}
