// scratch probe (not part of repo)
use advembed::attack::*;
use advembed::codec::ChunkPlan;
use advembed::data::synth_dataset;
use advembed::neuralkey::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    // pipeline unit fixture search: 8x8x3, 4 classes
    for (epochs, lr, batch) in [(3usize, 0.05f32, 16usize), (6, 0.02, 8), (10, 0.01, 8), (14, 0.005, 8)] {
        let dataset = synth_dataset(4, 40, (16, 16, 3), 5).unwrap();
        let base = build_model(&family_arch((16, 16, 3), 4, 0.5, 1), 17).unwrap();
        let o = train(&base, &dataset, &TrainConfig { epochs, learning_rate: lr, batch_size: batch, seed: 1 }).unwrap();
        let model = o.model;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool: Vec<Tensor> = (0..12).map(|_| {
            let data = (0..768).map(|_| rng.gen_range(0.0..1.0)).collect();
            Tensor::from_vec(vec![16, 16, 3], data).unwrap()
        }).collect();
        // all single digits and all ordered pairs, R=4 eps=1.5
        let mut fail1 = 0;
        for d in 0..4u32 {
            let plan = ChunkPlan { chunks: vec![vec![d]], k: 1, base: 4 };
            let cfg = AttackConfig { epsilon: 1.5, iterations: 25, restarts: 4, k: 1, ..AttackConfig::default() };
            if sata_embed(&model, &pool, &plan, &cfg, 40 + d as u64).unwrap().best_rate < 1.0 { fail1 += 1; }
        }
        let mut fail2 = 0;
        for a in 0..4u32 { for b in 0..4u32 { if a != b {
            let plan = ChunkPlan { chunks: vec![vec![a, b]], k: 2, base: 4 };
            let cfg = AttackConfig { epsilon: 1.5, iterations: 60, restarts: 10, k: 2, gamma: 1.0, ..AttackConfig::default() };
            if sata_embed(&model, &pool, &plan, &cfg, (a*10+b) as u64).unwrap().best_rate < 1.0 { fail2 += 1; }
        }}}
        println!("epochs {epochs} lr {lr} batch {batch}: acc {:.3} | k1 fails {fail1}/4 k2 fails {fail2}/12", o.final_train_accuracy);
    }
}
