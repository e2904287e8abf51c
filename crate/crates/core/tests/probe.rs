use varbayes::datagen::{mix_sources, sample_logistic_sources};
use varbayes::ensemble::map_structure;
use varbayes::vbbss::{fit_all, BssConfig};

#[test]
fn probe_fig2() {
    for seed in 0..2u64 {
        let sources = sample_logistic_sources(4000, 5, seed).unwrap();
        let (data, _, noise_vars) = mix_sources(&sources, 11, 20.0, seed.wrapping_add(1)).unwrap();
        let config = BssConfig {
            lambdas: Some(noise_vars.map(|v| 1.0 / v)),
            ..BssConfig::default()
        };
        let t0 = std::time::Instant::now();
        match fit_all(&data, 8, &config) {
            Ok(sweep) => {
                let chosen = map_structure(&sweep.posterior).unwrap();
                let fs: Vec<String> = sweep.posterior.entries.iter().map(|(m,e)| format!("m{m}:{:.0}", e.free_energy)).collect();
                println!("seed {seed}: chosen {chosen} in {:?} | {} | warn {:?}", t0.elapsed(), fs.join(" "), sweep.warnings.len());
            }
            Err(e) => println!("seed {seed}: FAILED {e}"),
        }
    }
}
