use ndarray::Array2;
use stressorlens_core::textprep::{build_vocabulary, count_matrix, tfidf_matrix, DocTermMatrix, FeatureConfig, NgramRange, SparseRow, Stopwords};
use stressorlens_core::topicmodel::{
    dominant_topic, fit_gibbs, fit_vb, group_mass, infer_theta, select_review_samples, top_terms, LdaConfig, LdaModel,
    SampleSelection, TopicGroupMap, TopicModelError,
};

fn counts(texts: &[&str]) -> DocTermMatrix {
    let docs: Vec<Vec<String>> = texts.iter().map(|t| t.split_whitespace().map(String::from).collect()).collect();
    let config = FeatureConfig {
        max_features: 100,
        ngram_range: NgramRange::new(1, 1).unwrap(),
        min_df: 1,
        stopwords: Stopwords::new(),
        ..FeatureConfig::default()
    };
    let vocab = build_vocabulary(&docs, &config).unwrap();
    count_matrix(&docs, &vocab).unwrap()
}

fn col(x: &DocTermMatrix, term: &str) -> usize {
    x.vocabulary.index_of(term).unwrap()
}

/// Hand-built model with a fixed θ, enough for sample selection.
fn model_with_theta(theta: Array2<f64>) -> LdaModel {
    let n = theta.nrows();
    let texts: Vec<String> = (0..n).map(|d| format!("w{} shared", d % 3)).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut model = fit_vb(&counts(&refs), &LdaConfig::new(theta.ncols())).unwrap();
    model.doc_topic = theta;
    model.with_doc_ids((0..n).map(|d| format!("d{d}")).collect())
}

#[test]
fn single_topic_reproduces_term_mass() {
    let x = counts(&["a a b", "b c", "a c c c"]);
    let model = fit_vb(&x, &LdaConfig::new(1)).unwrap();
    assert!(model.doc_topic.iter().all(|v| (*v - 1.0).abs() < 1e-15));
    let eta = model.config.eta;
    let (n, v) = (9.0, 3.0);
    for (term, count) in [("a", 3.0), ("b", 2.0), ("c", 4.0)] {
        let expected = (count + eta) / (n + v * eta);
        assert!((model.topic_word[[0, col(&x, term)]] - expected).abs() < 1e-12, "{term}");
    }
    assert_eq!(top_terms(&model, 0, 1).unwrap()[0].0, "c");
    assert!(top_terms(&model, 0, 0).unwrap().is_empty());
    assert_eq!(top_terms(&model, 0, 10).unwrap().len(), 3);
}

#[test]
fn gibbs_single_document_is_forced() {
    let x = counts(&["a a a"]);
    let model = fit_gibbs(&x, &LdaConfig::new(1)).unwrap();
    assert_eq!(model.doc_topic[[0, 0]], 1.0);
    let eta = model.config.eta;
    assert!((model.topic_word[[0, 0]] - (3.0 + eta) / (3.0 + eta)).abs() < 1e-15);
    let weighted = tfidf_matrix(&[vec!["a".to_string()]], &x.vocabulary).unwrap();
    assert!(matches!(fit_gibbs(&weighted, &LdaConfig::new(1)), Err(TopicModelError::NotCounts)));
}

#[test]
fn identical_documents_get_identical_rows() {
    let x = counts(&["mask virus fear", "school zoom exam", "mask virus fear", "job rent money"]);
    let model = fit_vb(&x, &LdaConfig::new(3).with_seed(4)).unwrap();
    assert_eq!(model.doc_topic.row(0), model.doc_topic.row(2));
    for row in model.doc_topic.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn same_seed_same_model() {
    let x = counts(&["mask virus fear mask", "school zoom exam", "job rent money job", "zoom exam mask"]);
    let cfg = LdaConfig::new(2).with_seed(11);
    assert_eq!(fit_vb(&x, &cfg).unwrap(), fit_vb(&x, &cfg).unwrap());
    assert_eq!(fit_gibbs(&x, &cfg).unwrap(), fit_gibbs(&x, &cfg).unwrap());
}

#[test]
fn zero_matrices_are_rejected() {
    let x = counts(&["a b"]);
    let zero = DocTermMatrix::from_dense(&[vec![0.0, 0.0]], x.vocabulary.clone(), x.weighting);
    assert!(matches!(fit_vb(&zero, &LdaConfig::new(2)), Err(TopicModelError::AllZero)));
}

#[test]
fn reinference_agrees_with_training() {
    let x = counts(&[
        "mask virus fear hospital",
        "mask virus hospital cough",
        "school zoom exam class",
        "zoom exam class semester",
        "mask fear cough virus",
        "semester school class zoom",
    ]);
    let mut cfg = LdaConfig::new(2).with_seed(3);
    cfg.elbo_rel_tol = 1e-12;
    cfg.max_iters = 1000;
    let model = fit_vb(&x, &cfg).unwrap();
    for d in 0..x.n_docs() {
        let inferred = infer_theta(&model, &x.rows[d]).unwrap();
        assert!(!inferred.degenerate);
        let tv: f64 = inferred.theta.iter().zip(model.doc_topic.row(d)).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        assert!(tv < 1e-3, "doc {d}: total variation {tv}");
    }
    let empty = infer_theta(&model, &SparseRow::from_dense(&vec![0.0; x.n_terms()])).unwrap();
    assert!(empty.degenerate);
    assert_eq!(empty.theta, vec![0.5, 0.5]);
    let wide = SparseRow::from_dense(&vec![1.0; x.n_terms() + 1]);
    assert!(matches!(infer_theta(&model, &wide), Err(TopicModelError::DimensionMismatch { .. })));
}

#[test]
fn dominant_topic_breaks_ties_low() {
    assert_eq!(dominant_topic(&[0.2, 0.5, 0.3]), 1);
    assert_eq!(dominant_topic(&[0.5, 0.5]), 0);
    assert_eq!(dominant_topic(&[0.25; 4]), 0);
}

#[test]
fn group_mass_adds_within_groups() {
    let map = TopicGroupMap { groups: vec!["A".into(), "B".into()], assignment: vec![0, 0, 1] };
    assert_eq!(group_mass(&[0.2, 0.3, 0.5], &map), vec![0.5, 0.5]);
    let one = TopicGroupMap { groups: vec!["all".into()], assignment: vec![0, 0, 0] };
    assert_eq!(group_mass(&[0.2, 0.3, 0.5], &one), vec![1.0]);
    let broken = TopicGroupMap { groups: vec!["A".into()], assignment: vec![0, 3] };
    assert!(broken.validate(2).is_err());
}

#[test]
fn review_samples_are_three_plus_three() {
    // ten documents dominated by topic 2 with distinct weights, two elsewhere
    let mut theta = Array2::zeros((12, 3));
    for d in 0..10 {
        let w = 0.5 + 0.04 * d as f64;
        theta[[d, 2]] = w;
        theta[[d, 0]] = 1.0 - w;
    }
    theta[[10, 0]] = 1.0;
    theta[[11, 1]] = 1.0;
    let model = model_with_theta(theta);
    let pick = select_review_samples(&model, 2, 7).unwrap();
    assert!(pick.complete);
    let ids: Vec<&str> = pick.samples.iter().map(|s| s.post_id.as_str()).collect();
    assert_eq!(&ids[..3], ["d9", "d8", "d7"]);
    assert!(pick.samples[3..].iter().all(|s| s.selection == SampleSelection::Random));
    let mut unique = ids.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), 6);
    assert_eq!(select_review_samples(&model, 2, 7).unwrap(), pick);
    assert!(matches!(select_review_samples(&model, 3, 7), Err(TopicModelError::NoSuchTopic { .. })));
}

#[test]
fn short_topics_are_flagged() {
    let mut theta = Array2::zeros((6, 3));
    for d in 0..4 {
        theta[[d, 2]] = 0.9 - 0.1 * d as f64;
        theta[[d, 0]] = 1.0 - theta[[d, 2]];
    }
    theta[[4, 0]] = 1.0;
    theta[[5, 0]] = 1.0;
    let model = model_with_theta(theta);
    let pick = select_review_samples(&model, 2, 1).unwrap();
    assert!(!pick.complete);
    let kinds: Vec<SampleSelection> = pick.samples.iter().map(|s| s.selection).collect();
    assert_eq!(kinds, [SampleSelection::TopRanked, SampleSelection::TopRanked, SampleSelection::TopRanked, SampleSelection::Random]);
    let none = select_review_samples(&model, 1, 1).unwrap();
    assert!(none.samples.is_empty() && !none.complete);
}

#[test]
fn models_round_trip_through_disk() {
    let x = counts(&["mask virus fear", "school zoom exam", "job rent money"]);
    let mut model = fit_vb(&x, &LdaConfig::new(2).with_seed(2))
        .unwrap()
        .with_doc_ids(vec!["p1".into(), "p2".into(), "p3".into()]);
    model.set_topic_name(1, Some("school".into())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    assert_eq!(LdaModel::load(dir.path()).unwrap(), model);
}
