use centerpose_core::refine::{hypothesis_starts, icp_refine, multi_hypothesis_refine, IcpParams};
use centerpose_core::synth::{default_models, random_scene, rotation_about_random_axis, random_unit_vector, SceneConfig};
use centerpose_core::Pose;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn perturbed(gt: &Pose, rng: &mut ChaCha8Rng, deg: f64, meters: f64) -> Pose {
    let dq = rotation_about_random_axis(rng, deg);
    Pose::new(dq * gt.rotation(), gt.translation + random_unit_vector(rng) * meters).unwrap()
}

#[test]
fn residual_never_increases_with_more_iterations() {
    let models = default_models();
    let g = random_scene(&models, &SceneConfig::default(), 3).unwrap();
    let k = g.scene.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for inst in &g.scene.instances {
        let model = &models[&inst.class_id];
        let init = perturbed(&inst.pose, &mut rng, 8.0, 0.015);
        let mut last = f64::INFINITY;
        for iters in 1..=15 {
            let params = IcpParams { max_iterations: iters, ..IcpParams::default() };
            let r = icp_refine(&g.rendered.depth, &g.rendered.labels, inst.class_id, model, &init, &k, &params).unwrap();
            assert!(r.mean_residual <= last, "class {} iteration {iters}", inst.class_id);
            last = r.mean_residual;
        }
    }
}

#[test]
fn selected_hypothesis_is_never_pareto_dominated() {
    let models = default_models();
    let g = random_scene(&models, &SceneConfig::default(), 8).unwrap();
    let k = g.scene.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (i, inst) in g.scene.instances.iter().enumerate() {
        let model = &models[&inst.class_id];
        let init = perturbed(&inst.pose, &mut rng, 25.0, 0.01);
        let params = IcpParams { rng_seed: i as u64, ..IcpParams::default() };
        let best = multi_hypothesis_refine(&g.rendered.depth, &g.rendered.labels, inst.class_id, model, &init, &k, &params)
            .unwrap()
            .best;
        for start in hypothesis_starts(&init, &params).unwrap() {
            let Ok(r) = icp_refine(&g.rendered.depth, &g.rendered.labels, inst.class_id, model, &start, &k, &params) else {
                continue;
            };
            let dominated = r.inlier_fraction > best.inlier_fraction && r.mean_residual < best.mean_residual;
            assert!(!dominated, "instance {i}");
        }
    }
}
