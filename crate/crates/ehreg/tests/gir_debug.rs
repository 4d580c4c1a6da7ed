use ehreg::sampler::gir::{getting_it_right, ModelKernel};

#[test]
fn horseshoe_final_scan() {
    for seed in [7000u64, 7001, 7002, 7003, 7004, 7005, 7006, 7007] {
        let mut kernel = ModelKernel::horseshoe().unwrap();
        let rep = getting_it_right(&mut kernel, 100_000, seed).unwrap();
        let worst = rep
            .stats
            .iter()
            .max_by(|a, b| a.z.abs().partial_cmp(&b.z.abs()).unwrap())
            .unwrap();
        println!(
            "seed {seed}: pass={} max|z|={:.2} ({})",
            rep.pass(),
            rep.max_abs_z(),
            worst.name
        );
    }
}
