use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Upsamples minority classes by random duplication to the majority count,
/// then adds Gaussian noise (`noise_scale × record std`) to
/// `round(noise_fraction × total)` randomly chosen records, flagging them.
pub fn augment_balance(dataset: &Dataset, noise_fraction: f64, noise_scale: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&noise_fraction) {
        return Err(Error::Config(format!("noise_fraction must be in [0,1], got {noise_fraction}")));
    }
    if !(noise_scale >= 0.0) {
        return Err(Error::Config(format!("noise_scale must be >= 0, got {noise_scale}")));
    }
    let counts = dataset.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Input(format!("class {:?} has no records", dataset.classes[c])));
    }
    let target = *counts.iter().max().expect("nonempty class set");
    let mut rng = rng_from(seed);
    let mut out = dataset.clone();
    for (c, &have) in counts.iter().enumerate() {
        let members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.label_index(i) == c).collect();
        for j in 0..target - have {
            let src = &dataset.records[members[rng.random_range(0..members.len())]];
            let mut dup = src.clone();
            dup.id = format!("{}-dup{j:04}", src.id);
            dup.duplicate_of = Some(src.id.clone());
            out.records.push(dup);
        }
    }

    let n_noisy = (noise_fraction * out.len() as f64).round() as usize;
    let mut chosen: Vec<usize> = index::sample(&mut rng, out.len(), n_noisy).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let rec = &mut out.records[i];
        let x = &rec.signal.samples;
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        let sigma = noise_scale * std;
        if sigma > 0.0 {
            for v in rec.signal.samples.iter_mut() {
                *v = (*v + sigma * rng.sample::<f64, _>(StandardNormal)) as f32 as f64;
            }
        }
        rec.noisy = true;
    }
    out.provenance = serde_json::json!({
        "augment_balance": {
            "noise_fraction": noise_fraction,
            "noise_scale": noise_scale,
            "seed": seed,
        },
        "of": dataset.provenance,
    });
    Ok(out)
}
