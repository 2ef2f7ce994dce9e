use std::time::Instant;

use darja_core::corpus::SynonymLexicon;
use darja_core::pipeline::{train_pipeline, TrainOptions};
use darja_core::synth::{generate, SynthConfig};

#[test]
fn synthetic_benchmark_meets_targets() {
    let start = Instant::now();
    let data = generate(&SynthConfig::default());
    let a = train_pipeline(&data, &SynonymLexicon::new(), &TrainOptions::default()).unwrap();
    let b = train_pipeline(&data, &SynonymLexicon::new(), &TrainOptions::default()).unwrap();
    println!("{}", a.report());
    assert_eq!(a.split_sizes, [960, 120, 120]);
    assert!(a.logreg.metrics.accuracy >= 0.90, "accuracy {}", a.logreg.metrics.accuracy);
    assert!(a.logreg.metrics.macro_f1 >= 0.88, "macro F1 {}", a.logreg.metrics.macro_f1);
    assert_eq!(a.logreg.metrics, b.logreg.metrics);
    assert_eq!(a.logreg.classifier, b.logreg.classifier);
    assert!(start.elapsed().as_secs() < 60);
}
