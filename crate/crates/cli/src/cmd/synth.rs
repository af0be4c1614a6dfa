use anyhow::Context;

use abmil_core::preprocess::{write_mask_png, write_rgb_png};
use abmil_core::seed::{derive_seed, tags};
use abmil_core::synth::{generate_cohort_with, generate_slide_image, CohortSpec, SlideGeometry};

use super::create_dir;
use crate::args::{GlobalArgs, SynthArgs};
use crate::exit;

/// Streams for synthetic images sit beside the cohort's own synth streams.
const IMAGE_TAG: u64 = 100;

pub fn run(global: &GlobalArgs, a: SynthArgs) -> anyhow::Result<()> {
    let mut spec = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| exit::input(format!("reading {}: {e}", p.display())))?;
            toml::from_str::<CohortSpec>(&text)
                .map_err(|e| exit::validation(format!("cohort spec {}: {e}", p.display())))?
        }
        None => CohortSpec::default(),
    };
    if let Some(n) = a.patients {
        spec.patients = n;
    }
    if let Some(e) = a.effect {
        spec.signal.effect = e;
    }
    if let Some(d) = a.feature_dim {
        spec.feature_dim = d;
    }
    if let Some(seed) = global.seed {
        spec.seed = seed;
    }
    let cohort = generate_cohort_with(&spec, a.bayes_samples)?;
    cohort
        .save(&a.out)
        .with_context(|| format!("writing cohort to {}", a.out.display()))?;

    if a.images > 0 {
        let dir = a.out.join("images");
        create_dir(&dir.join("truth"))?;
        for i in 0..a.images {
            let seed = derive_seed(spec.seed, &[tags::SYNTH, IMAGE_TAG, i as u64]);
            let geom = SlideGeometry::random(a.image_size, a.image_size, 3, i % 2 == 0, seed);
            let (img, mask) = generate_slide_image(&geom)?;
            let name = format!("slide_{i:03}");
            write_rgb_png(&dir.join(format!("{name}.png")), &img)?;
            write_mask_png(&dir.join("truth").join(format!("{name}_mask.png")), &mask)?;
        }
    }
    let patients = cohort.cohort.manifest.patient_labels();
    println!(
        "wrote {} slides from {} patients to {}{}",
        cohort.bags().len(),
        patients.len(),
        a.out.display(),
        cohort
            .truth
            .bayes_auc
            .map_or(String::new(), |v| format!(" (Bayes-optimal AUC {v:.4})"))
    );
    Ok(())
}
