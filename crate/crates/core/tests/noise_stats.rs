use centerpose_core::synth::{default_models, ground_truth_fields, perturb, random_scene, NoiseSpec, SceneConfig};

#[test]
fn perturbation_matches_requested_statistics() {
    let models = default_models();
    let g = random_scene(&models, &SceneConfig::default(), 1).unwrap();
    let truth = ground_truth_fields(&g.scene, &g.rendered).unwrap();
    let spec = NoiseSpec { direction_sigma: 0.05, depth_sigma: 0.005, depth_bias_sigma: 0.0, label_flip_rate: 0.02, rng_seed: 17 };
    let (field, labels) = perturb(&truth.field, &g.rendered.labels, &spec).unwrap();

    let (mut n, mut ang2, mut dz2, mut dz) = (0usize, 0.0, 0.0, 0.0);
    for c in truth.field.classes() {
        let (a, b) = (truth.field.planes(c).unwrap(), field.planes(c).unwrap());
        for i in 0..a.nx.len() {
            if a.nx[i] == 0.0 && a.ny[i] == 0.0 {
                continue;
            }
            let cross = a.nx[i] as f64 * b.ny[i] as f64 - a.ny[i] as f64 * b.nx[i] as f64;
            let dot = a.nx[i] as f64 * b.nx[i] as f64 + a.ny[i] as f64 * b.ny[i] as f64;
            ang2 += cross.atan2(dot).powi(2);
            let d = b.tz[i] as f64 - a.tz[i] as f64;
            dz += d;
            dz2 += d * d;
            n += 1;
        }
    }
    let n_f = n as f64;
    assert!(n > 5000);
    assert!(((ang2 / n_f).sqrt() - 0.05).abs() < 0.05 * 0.05, "direction sigma {}", (ang2 / n_f).sqrt());
    assert!(((dz2 / n_f).sqrt() - 0.005).abs() < 0.005 * 0.05);
    assert!((dz / n_f).abs() < 3.0 * 0.005 / n_f.sqrt());

    let total = labels.labels.len() as f64;
    let flipped = labels.labels.iter().zip(&g.rendered.labels.labels).filter(|(a, b)| a != b).count() as f64;
    let sd = (0.02 * 0.98 / total).sqrt();
    assert!((flipped / total - 0.02).abs() < 5.0 * sd, "flip rate {}", flipped / total);
}
