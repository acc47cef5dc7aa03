use skillshap_core::attribution::{default_budget, explain, rank_instances, BackgroundSet, Method};
use skillshap_core::dataset::synthetic::{planted_binary, PlantedSignal};
use skillshap_core::dataset::{read_dataset, split_train_test, undersample, write_dataset, Category, ScalarNormalizer};
use skillshap_core::models::fit;
use skillshap_core::validation::{evaluate_on_test, grid_search, stratified_kfold};
use skillshap_core::{Family, FittedModel};

#[test]
fn every_family_searches_fits_and_explains() {
    let ds = planted_binary(500, 5, 0.2, 3);
    let (train, test) = split_train_test(&ds, 0.8, 4).unwrap();
    let folds = stratified_kfold(&train, 3, 5).unwrap();
    let bg = BackgroundSet::sample(&train, 30, 6).unwrap();
    for family in Family::ALL {
        let mut grid = family.default_grid();
        for (_, values) in &mut grid.axes {
            values.truncate(1);
        }
        let (config, report) = grid_search(&train, family, &grid, &folds, 7, 2).unwrap();
        assert_eq!(report.candidates.len(), 1, "{family}");
        let model = fit(&undersample(&train, 8).unwrap(), &config).unwrap();
        let eval = evaluate_on_test(&model, &test, true, 9).unwrap();
        assert!(eval.evaluation.metrics.auc > 0.7, "{family}: AUC {}", eval.evaluation.metrics.auc);

        let method = Method::for_model(&model);
        let x = test.row(0);
        let a = explain(&model, method, x, &bg, default_budget(5), 10).unwrap();
        assert!(a.residual <= 1e-6, "{family}: residual {}", a.residual);
        assert_eq!(a.values.len(), 5);
    }
}

#[test]
fn model_json_round_trip_is_bitwise() {
    let ds = planted_binary(300, 4, 0.3, 11);
    for family in Family::ALL {
        let mut grid = family.default_grid();
        for (_, values) in &mut grid.axes {
            values.truncate(1);
        }
        let config = skillshap_core::ModelConfig {
            family,
            hyperparameters: grid.points().remove(0),
            seed: 12,
        };
        let model = fit(&ds, &config).unwrap();
        let back = FittedModel::from_json(&model.to_json()).unwrap();
        for x in ds.rows().take(50) {
            assert_eq!(
                model.raw_output(x).unwrap().to_bits(),
                back.raw_output(x).unwrap().to_bits(),
                "{family}"
            );
        }
    }
}

#[test]
fn planted_labels_survive_files_and_scaling() {
    let ds = PlantedSignal {
        rows: 400,
        ..PlantedSignal::default()
    }
    .generate(13);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("planted.csv");
    write_dataset(&ds, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.values(), ds.values());
    assert_eq!(back.labels(), ds.labels());

    let pair = back.binarize(Category::High, Category::Low).unwrap();
    let (train, test) = split_train_test(&pair, 0.75, 14).unwrap();
    let norm = ScalarNormalizer::fit(&train);
    let scaled = norm.apply(&test).unwrap();
    for b in &norm.columns {
        let c = scaled.column_index(&b.name).unwrap();
        assert!(scaled.column(c).iter().all(|v| (0.0..=1.0).contains(v)), "{}", b.name);
    }
    let high = pair.target().unwrap().iter().filter(|&&t| t == 1).count();
    let low = pair.n_rows() - high;
    assert!(high > 0 && low > 0);

    let model = fit(&undersample(&train, 15).unwrap(), &skillshap_core::ModelConfig::new(Family::GradientBoosting, 16)).unwrap();
    let bg = BackgroundSet::sample(&norm.apply(&train).unwrap(), 20, 17).unwrap();
    let attrs: Vec<_> = (0..scaled.n_rows().min(10))
        .map(|i| {
            explain(&model, Method::Tree, scaled.row(i), &bg, 0, 0)
                .unwrap()
                .with_instance(scaled.row_ids()[i])
        })
        .collect();
    let summary = rank_instances(&attrs, &scaled.column_names()).unwrap();
    assert_eq!(summary.totals.len(), attrs.len());
    let top = summary.top().unwrap().total;
    assert!(summary.totals.iter().all(|t| t.total <= top));
}
