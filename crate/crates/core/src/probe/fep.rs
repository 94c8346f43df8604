use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embedding::{EmbeddingProvider, EmbeddingSet};
use super::metrics::{frechet_distance, gaussian_fit, ssf_score, DriftPoint, DriftSeries, FepBaseline};
use crate::control::ControlScalar;
use crate::error::{Error, Result};
use crate::forge::FrameBuffer;
use crate::net::{model_forward, text_embedding, Checkpoint, InferenceMode, LatentCodec, Mat, TEXT_TOKENS};
use crate::rng;

/// Probe settings shared by every checkpoint of one run.
#[derive(Debug, Clone)]
pub struct FepSetup {
    pub codec: LatentCodec,
    pub prompts: Vec<String>,
    /// Condition value fed to the adapter during probing.
    pub c: ControlScalar,
    pub mode: InferenceMode,
}

impl FepSetup {
    pub fn new(codec: LatentCodec, prompts: Vec<String>) -> Self {
        Self {
            codec,
            prompts,
            c: ControlScalar::new(0.0).expect("0 is in range"),
            mode: InferenceMode::Joint,
        }
    }
}

/// The shared starting latent for one seed.
pub fn probe_noise(codec: &LatentCodec, latent_seed: u64) -> Mat {
    let mut r = rng::stream(latent_seed, &[0xfe9]);
    Mat::from_fn(codec.n_tokens(), codec.dim, |_, _| r.sample::<f64, _>(StandardNormal))
}

/// One denoising step from pure noise (`t = 1`) per prompt; every prompt
/// starts from the same latent. The clean estimate `ε − v̂` is decoded.
pub fn fep_generate(ckpt: &Checkpoint, setup: &FepSetup, latent_seed: u64) -> Result<Vec<Vec<FrameBuffer>>> {
    if setup.codec.dim != ckpt.config.model_dim {
        return Err(Error::Contract(format!(
            "codec dim {} does not match model dim {}",
            setup.codec.dim, ckpt.config.model_dim
        )));
    }
    let noise = probe_noise(&setup.codec, latent_seed);
    setup
        .prompts
        .par_iter()
        .map(|p| {
            let text = text_embedding(p, TEXT_TOKENS, ckpt.config.text_dim);
            let out = model_forward(&noise, &text, setup.c, ckpt, setup.mode)?;
            let v = &out - &noise;
            setup.codec.decode(&(&noise - v))
        })
        .collect()
}

pub fn fep_embed(
    ckpt: &Checkpoint,
    setup: &FepSetup,
    latent_seed: u64,
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddingSet> {
    let clips = fep_generate(ckpt, setup, latent_seed)?;
    let rows: Vec<_> = clips.par_iter().map(|f| provider.embed(f)).collect::<Result<_>>()?;
    let d = provider.dim();
    let vectors = Mat::from_fn(rows.len(), d, |i, j| rows[i][j]);
    EmbeddingSet::new(provider.name(), setup.prompts.clone(), vectors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FepMetrics {
    pub ssf: f64,
    pub ssfd: f64,
    pub excluded: usize,
}

/// SSF and SS-FD between two embedding sets. Bitwise identical sets are
/// reported as exactly 1 and 0.
pub fn fep_compare(reference: &EmbeddingSet, new: &EmbeddingSet) -> Result<FepMetrics> {
    let s = ssf_score(reference, new)?;
    let ssfd = if reference == new {
        0.0
    } else {
        frechet_distance(&gaussian_fit(reference)?, &gaussian_fit(new)?)?
    };
    Ok(FepMetrics {
        ssf: s.score,
        ssfd,
        excluded: s.excluded,
    })
}

/// Pristine-vs-pristine metrics under different latent seeds, averaged over
/// all seed pairs.
pub fn fep_baseline(
    pristine: &Checkpoint,
    setup: &FepSetup,
    seeds: &[u64],
    provider: &dyn EmbeddingProvider,
) -> Result<FepBaseline> {
    if seeds.len() < 2 {
        return Err(Error::Domain(format!("baseline needs at least 2 seeds, got {}", seeds.len())));
    }
    let sets: Vec<EmbeddingSet> = seeds
        .iter()
        .map(|&s| fep_embed(pristine, setup, s, provider))
        .collect::<Result<_>>()?;
    let (mut ssf, mut ssfd, mut n) = (0.0, 0.0, 0.0);
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let m = fep_compare(&sets[i], &sets[j])?;
            ssf += m.ssf;
            ssfd += m.ssfd;
            n += 1.0;
        }
    }
    Ok(FepBaseline {
        ssf_base: ssf / n,
        ssfd_base: ssfd / n,
    })
}

/// Tracks drift of one training run against its pristine reference. The
/// reference embeddings and the self-baseline are computed once.
pub struct FepMonitor {
    pub setup: FepSetup,
    provider: Box<dyn EmbeddingProvider>,
    pub latent_seed: u64,
    pub reference: EmbeddingSet,
    pub baseline: FepBaseline,
    pub series: DriftSeries,
}

impl FepMonitor {
    pub fn new(
        pristine: &Checkpoint,
        setup: FepSetup,
        provider: Box<dyn EmbeddingProvider>,
        latent_seed: u64,
        baseline_seeds: &[u64],
    ) -> Result<Self> {
        let reference = fep_embed(pristine, &setup, latent_seed, provider.as_ref())?;
        let baseline = fep_baseline(pristine, &setup, baseline_seeds, provider.as_ref())?;
        Ok(Self {
            setup,
            provider,
            latent_seed,
            reference,
            baseline,
            series: DriftSeries::new(),
        })
    }

    pub fn measure(&self, ckpt: &Checkpoint) -> Result<FepMetrics> {
        let e = fep_embed(ckpt, &self.setup, self.latent_seed, self.provider.as_ref())?;
        fep_compare(&self.reference, &e)
    }

    /// Measures and appends a point at `ckpt.step`.
    pub fn observe(&mut self, ckpt: &Checkpoint) -> Result<FepMetrics> {
        let m = self.measure(ckpt)?;
        self.series.push(DriftPoint {
            step: ckpt.step,
            ssf: m.ssf,
            ssfd: m.ssfd,
        })?;
        Ok(m)
    }
}

pub const PROMPT_CATEGORIES: [&str; 8] = [
    "animals",
    "architecture",
    "food",
    "humans",
    "lifestyle",
    "plants",
    "scenery",
    "vehicles",
];

/// Built-in 64-prompt probe set, eight per category.
pub const DEFAULT_PROMPTS: [&str; 64] = [
    "a red fox trotting across fresh snow",
    "a golden retriever catching a frisbee in a park",
    "a school of silver fish turning in clear water",
    "a hawk circling above a dry canyon",
    "a cat stretching on a sunny windowsill",
    "a herd of horses galloping along a beach",
    "a hummingbird hovering beside a red flower",
    "an elephant spraying water at a river bank",
    "a gothic cathedral facade at dusk",
    "a glass skyscraper reflecting passing clouds",
    "a narrow cobblestone alley lined with old houses",
    "a wooden pagoda on a misty hillside",
    "a modern concrete museum with curved walls",
    "a lighthouse on a rocky point at sunset",
    "a stone bridge arching over a quiet canal",
    "an abandoned factory hall with broken windows",
    "a stack of pancakes drizzled with syrup",
    "a bowl of ramen with steam rising",
    "fresh bread cooling on a wooden table",
    "a chef slicing vegetables on a cutting board",
    "a cup of coffee with swirling milk foam",
    "a colourful fruit stall at a street market",
    "a pizza bubbling inside a brick oven",
    "chocolate sauce pouring over ice cream",
    "a dancer spinning on an empty stage",
    "a child flying a kite on a windy hill",
    "an old man reading a newspaper on a bench",
    "a runner crossing a finish line in the rain",
    "two friends laughing at a cafe table",
    "a violinist playing in a subway station",
    "a woman painting at an easel by a window",
    "a climber reaching for a hold on a cliff",
    "a family setting a table for dinner",
    "a person jogging with headphones at dawn",
    "someone folding laundry in a bright room",
    "a group of friends around a campfire",
    "a commuter checking a phone on a crowded train",
    "a couple walking a dog through autumn leaves",
    "a person typing at a desk beside a plant",
    "friends clinking glasses at a rooftop party",
    "sunflowers swaying in a summer field",
    "a single oak tree in a green meadow",
    "cherry blossoms falling along a riverside path",
    "ferns unfurling on a damp forest floor",
    "a cactus garden under harsh midday light",
    "water lilies drifting on a still pond",
    "tall grass rippling in the wind",
    "ivy climbing up a brick wall",
    "a waterfall plunging into a turquoise pool",
    "rolling sand dunes under a starry sky",
    "a mountain lake reflecting snowy peaks",
    "storm clouds gathering over a wheat field",
    "waves crashing against black volcanic rocks",
    "a foggy pine forest at sunrise",
    "northern lights above a frozen lake",
    "a river winding through a green valley",
    "a red vintage car driving along a coast road",
    "a freight train crossing a steel bridge",
    "a sailboat heeling in strong wind",
    "a helicopter landing on a rooftop pad",
    "a bicycle courier weaving through traffic",
    "a jet taking off at twilight",
    "a tram gliding down a city street at night",
    "a motorboat leaving a white wake on a lake",
];

pub fn default_prompts() -> Vec<String> {
    DEFAULT_PROMPTS.iter().map(|s| s.to_string()).collect()
}

/// One prompt per line; blank lines and `#` comments are skipped.
pub fn parse_prompts(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use crate::probe::embedding::FrameStatsProvider;

    fn setup(n: usize) -> (Checkpoint, FepSetup) {
        let cfg = ModelConfig {
            n_blocks: 3,
            adapter_blocks: vec![2],
            ..ModelConfig::default()
        };
        let ck = Checkpoint::init(cfg, 4).unwrap();
        let prompts = default_prompts().into_iter().take(n).collect();
        (ck, FepSetup::new(LatentCodec::new(64, 1), prompts))
    }

    #[test]
    fn default_prompt_set_shape() {
        let p = default_prompts();
        assert_eq!(p.len(), 64);
        let unique: std::collections::BTreeSet<_> = p.iter().collect();
        assert_eq!(unique.len(), 64);
        assert_eq!(parse_prompts("a\n\n# c\n b \n"), vec!["a", "b"]);
    }

    #[test]
    fn generate_shape_and_determinism() {
        let (ck, s) = setup(64);
        let a = fep_generate(&ck, &s, 9).unwrap();
        assert_eq!(a.len(), 64);
        assert!(a.iter().all(|f| f.len() == 4));
        assert_eq!(a, fep_generate(&ck, &s, 9).unwrap());
    }

    #[test]
    fn zero_init_checkpoint_matches_pristine() {
        let (ck, s) = setup(4);
        assert_eq!(fep_generate(&ck, &s, 2).unwrap(), fep_generate(&ck.pristine(), &s, 2).unwrap());
    }

    #[test]
    fn same_seed_is_exact_and_other_seed_is_not() {
        let (ck, s) = setup(16);
        let p = FrameStatsProvider::default();
        let a = fep_embed(&ck, &s, 1, &p).unwrap();
        let m = fep_compare(&a, &fep_embed(&ck, &s, 1, &p).unwrap()).unwrap();
        assert_eq!((m.ssf, m.ssfd), (1.0, 0.0));
        let base = fep_baseline(&ck, &s, &[1, 1], &p).unwrap();
        assert_eq!((base.ssf_base, base.ssfd_base), (1.0, 0.0));
        let base = fep_baseline(&ck, &s, &[1, 2], &p).unwrap();
        assert!(base.ssf_base < 1.0);
        assert!(base.ssfd_base >= 0.0);
        assert!(fep_baseline(&ck, &s, &[1], &p).is_err());
    }

    #[test]
    fn codec_mismatch_is_rejected() {
        let (ck, mut s) = setup(2);
        s.codec = LatentCodec::new(32, 1);
        assert!(fep_generate(&ck, &s, 0).is_err());
    }
}
