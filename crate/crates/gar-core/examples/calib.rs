// temporary calibration harness: full criterion-9 protocol on concrete
use gar_core::experiment::{run_experiment, DatasetSelector, ExperimentConfig, MethodKind};
use gar_core::metrics::Metric;
use std::time::Instant;

fn main() {
    let cfg = ExperimentConfig::new(
        DatasetSelector::Preset { name: "concrete".into(), path: "data/concrete.csv".into() },
        MethodKind::Gar,
    );
    let t0 = Instant::now();
    let report = run_experiment(&cfg).unwrap();
    println!("full protocol in {:.1}s", t0.elapsed().as_secs_f64());
    let base = report.baseline.as_ref().unwrap();
    for m in Metric::ALL {
        let g = report.primary.summary(m);
        let b = base.summary(m);
        println!("{}: gar {:.4} ({:.4})  mae-baseline {:.4} ({:.4})",
            m.name(), g.test_mean, g.test_std, b.test_mean, b.test_std);
    }
    for sel in &report.primary.summary(Metric::Pearson).selections {
        println!("fold {}: lr {} wd {} alpha {:?} epoch {} val {:.4} test {:.4}",
            sel.fold, sel.lr0, sel.weight_decay, sel.hyper, sel.epoch, sel.val, sel.test);
    }
}
