use lqr_etl::config::ScenarioConfig;
use lqr_etl::scenario::{run_montecarlo, MonteCarloOptions};
use std::time::Instant;

fn main() {
    let toml = r#"
[system]
source = "random"
state_dim = 5

[trigger]
kind = "chernoff"
window = 200
eta = 0.01

[run]
total_steps = 20000
change_interval = 10000
master_seed = 1
"#;
    let cfg = ScenarioConfig::from_toml_str(toml).unwrap();
    let t0 = Instant::now();
    let out = run_montecarlo(&cfg, &MonteCarloOptions { rollouts: 8, total_changes: 80 }).unwrap();
    println!("elapsed: {:?}", t0.elapsed());
    print!("{}", out.summary_text());
    let detected: Vec<(usize, f64)> = out.records.iter().filter_map(|(_, r)| r.delay.map(|d| (d, r.delta_sys.log10().abs()))).collect();
    let large: Vec<usize> = detected.iter().filter(|(_, l)| *l > 0.05).map(|(d, _)| *d).collect();
    println!("detected {}: large-change count {}", detected.len(), large.len());
    let mut sorted = large.clone(); sorted.sort();
    if !sorted.is_empty() { println!("large-change delays: median {} min {} max {}", sorted[sorted.len()/2], sorted[0], sorted[sorted.len()-1]); }
}
