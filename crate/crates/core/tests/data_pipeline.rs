use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use yieldnet::data::*;
use yieldnet::features::{FeatureLayout, WEATHER_LEN, WEEKS};

fn record(county: u32, state: u32, year: i32, y: Option<f64>) -> CountyYearRecord {
    let mut r = CountyYearRecord::zeroed(county, state, year, Crop::Corn, 3);
    r.yield_bu_acre = y;
    r
}

#[test]
fn weekly_average_of_a_constant_is_constant() {
    let weekly = weekly_average(&[2.5; 365]).unwrap();
    assert_eq!(weekly, vec![2.5; 52]);
}

#[test]
fn weekly_average_of_day_numbers() {
    let days: Vec<f64> = (1..=365).map(f64::from).collect();
    let weekly = weekly_average(&days).unwrap();
    assert_eq!(weekly.len(), 52);
    assert_eq!(weekly[0], 4.0);
    assert_eq!(weekly[51], 361.5);
}

#[test]
fn weekly_average_handles_leap_years() {
    let days: Vec<f64> = (1..=366).map(f64::from).collect();
    let weekly = weekly_average(&days).unwrap();
    assert_eq!(weekly.len(), 52);
    assert_eq!(weekly[51], (358..=366).sum::<i32>() as f64 / 9.0);
}

#[test]
fn weekly_average_rejects_other_lengths() {
    for n in [0, 52, 364, 367] {
        assert!(matches!(weekly_average(&vec![1.0; n]), Err(DataError::DailyLength(m)) if m == n));
    }
}

proptest! {
    #[test]
    fn weekly_average_preserves_the_total(days in prop::collection::vec(-50.0f64..50.0, 365..=366)) {
        let weekly = weekly_average(&days).unwrap();
        let last = days.len() - 7 * 51;
        let rebuilt: f64 = weekly[..51].iter().map(|w| 7.0 * w).sum::<f64>() + last as f64 * weekly[51];
        let total: f64 = days.iter().sum();
        prop_assert!((rebuilt - total).abs() < 1e-9, "{rebuilt} vs {total}");
    }
}

fn with_soil(county: u32, value: Option<f64>) -> CountyYearRecord {
    let mut r = record(county, 1, 2000, Some(1.0));
    match value {
        Some(v) => r.soil_profile[0] = v,
        None => {
            r.soil_profile[0] = f64::NAN;
            r.soil_state[0] = CellState::Missing;
        }
    }
    r
}

const FIRST: SoilColumn = SoilColumn::Profile { variable: 0, depth: 0 };

#[test]
fn column_mean_fills_the_gap() {
    let mut rs = vec![with_soil(1, Some(1.0)), with_soil(2, None), with_soil(3, Some(3.0))];
    assert_eq!(impute_column_mean(&mut rs, FIRST).unwrap(), 1);
    let values: Vec<f64> = rs.iter().map(|r| r.soil_profile[0]).collect();
    assert_eq!(values, vec![1.0, 2.0, 3.0]);
    let flags: Vec<CellState> = rs.iter().map(|r| r.soil_state[0]).collect();
    assert_eq!(flags, vec![CellState::Observed, CellState::Imputed, CellState::Observed]);
    assert!(rs.iter().all(|r| r.soil_state[1..].iter().all(|s| *s == CellState::Observed)));
}

#[test]
fn column_mean_leaves_complete_columns_alone() {
    let mut rs = vec![with_soil(1, Some(1.0)), with_soil(2, Some(5.0))];
    let before = rs.clone();
    assert_eq!(impute_column_mean(&mut rs, FIRST).unwrap(), 0);
    assert_eq!(rs, before);
}

#[test]
fn fully_missing_column_is_an_error_naming_it() {
    let mut rs = vec![with_soil(1, None), with_soil(2, None)];
    let err = impute_column_mean(&mut rs, FIRST).unwrap_err();
    assert!(err.to_string().contains("soil variable 1 depth 1"), "{err}");
}

#[test]
fn column_mean_counts_each_county_once() {
    let mut rs = vec![with_soil(1, Some(1.0)), with_soil(1, Some(1.0)), with_soil(1, Some(1.0)), with_soil(2, Some(4.0)), with_soil(3, None)];
    rs[1].year = 2001;
    rs[2].year = 2002;
    impute_column_mean(&mut rs, FIRST).unwrap();
    assert_eq!(rs[4].soil_profile[0], 2.5);
}

fn management(state: u32, year: i32, values: &[Option<f64>]) -> CountyYearRecord {
    let mut r = CountyYearRecord::zeroed(state, state, year, Crop::Corn, values.len());
    for (w, v) in values.iter().enumerate() {
        match v {
            Some(v) => r.management[w] = *v,
            None => {
                r.management[w] = f64::NAN;
                r.management_state[w] = CellState::Missing;
            }
        }
    }
    r
}

#[test]
fn management_uses_the_same_week_in_the_same_year() {
    let mut rs = vec![
        management(1, 2000, &[Some(40.0)]),
        management(2, 2000, &[Some(60.0)]),
        management(3, 2000, &[None]),
    ];
    assert_eq!(impute_management(&mut rs).unwrap(), 1);
    assert_eq!(rs[2].management[0], 50.0);
    assert_eq!(rs[2].management_state[0], CellState::Imputed);
}

#[test]
fn management_without_gaps_is_unchanged() {
    let mut rs = vec![management(1, 2000, &[Some(10.0), Some(20.0)]), management(2, 2000, &[Some(5.0), Some(50.0)])];
    let before = rs.clone();
    assert_eq!(impute_management(&mut rs).unwrap(), 0);
    assert_eq!(rs, before);
}

#[test]
fn management_never_reads_other_years() {
    let build = |next: f64| {
        let mut rs = vec![
            management(1, 2000, &[Some(40.0)]),
            management(2, 2000, &[None]),
            management(1, 2001, &[Some(next)]),
            management(2, 2001, &[Some(next)]),
        ];
        impute_management(&mut rs).unwrap();
        rs[1].management[0]
    };
    assert_eq!(build(0.0), build(99.0));
}

#[test]
fn unobserved_management_week_is_an_error() {
    let mut rs = vec![management(1, 2000, &[Some(1.0), None]), management(2, 2000, &[Some(2.0), None])];
    assert!(matches!(
        impute_management(&mut rs),
        Err(DataError::ManagementUnobserved { year: 2000, week: 2 })
    ));
}

#[test]
fn imputed_management_stays_monotone() {
    let mut rs = vec![
        management(1, 2000, &[Some(10.0), Some(20.0), Some(90.0)]),
        management(2, 2000, &[Some(50.0), None, Some(60.0)]),
    ];
    impute_management(&mut rs).unwrap();
    let m = &rs[1].management;
    assert!(m[0] <= m[1] && m[1] <= m[2], "{m:?}");
}

#[test]
fn imputation_is_idempotent() {
    let synth = gen_synthetic(&SyntheticSpec {
        counties: 12,
        start_year: 1990,
        end_year: 1997,
        missing_soil: 0.3,
        missing_management: 0.3,
        ..Default::default()
    })
    .unwrap();
    let mut once = synth.records.clone();
    impute_soil(&mut once).unwrap();
    impute_management(&mut once).unwrap();
    let mut twice = once.clone();
    assert_eq!(impute_soil(&mut twice).unwrap(), 0);
    assert_eq!(impute_management(&mut twice).unwrap(), 0);
    assert_eq!(once, twice);
    assert!(once.iter().all(CountyYearRecord::is_complete));
}

#[test]
fn average_yields() {
    let avg = compute_avg_yields([(2000, Some(100.0)), (2000, Some(200.0)), (2001, Some(7.0)), (2002, None)]);
    assert_eq!(avg, BTreeMap::from([(2000, 150.0), (2001, 7.0)]));
}

proptest! {
    #[test]
    fn average_yields_ignore_order(mut ys in prop::collection::vec((1990i32..1995, prop::option::of(0.0f64..300.0)), 1..40)) {
        let a = compute_avg_yields(ys.clone());
        ys.reverse();
        let b = compute_avg_yields(ys);
        prop_assert_eq!(a.len(), b.len());
        for (k, v) in &a {
            prop_assert!((v - b[k]).abs() < 1e-9);
        }
    }
}

fn county_years(county: u32, years: std::ops::RangeInclusive<i32>) -> Vec<CountyYearRecord> {
    years.map(|y| record(county, 1, y, Some(100.0 + f64::from(y - 1980)))).collect()
}

fn averages(years: std::ops::RangeInclusive<i32>) -> BTreeMap<i32, f64> {
    years.map(|y| (y, f64::from(y))).collect()
}

#[test]
fn window_counting() {
    let ds = Dataset::new(Crop::Corn, county_years(1, 1980..=1990)).unwrap();
    let targets: Vec<i32> = (1985..=1990).collect();
    let a = assemble_sequences(&ds, 5, &targets, Phase::Train, &averages(1980..=1990));
    assert_eq!(a.samples.len(), 6);
    assert_eq!(a.skipped, 0);
    assert!(a.samples.iter().all(|s| s.steps() == 6));
}

#[test]
fn gap_in_the_window_skips_the_target() {
    let mut rs = county_years(1, 1980..=1990);
    rs.retain(|r| r.year != 1988);
    let ds = Dataset::new(Crop::Corn, rs).unwrap();
    let a = assemble_sequences(&ds, 5, &[1990], Phase::Train, &averages(1980..=1990));
    assert!(a.samples.is_empty());
    assert_eq!(a.skipped, 1);
}

#[test]
fn test_phase_carries_the_previous_average() {
    let ds = Dataset::new(Crop::Corn, county_years(1, 2012..=2018)).unwrap();
    let avg = averages(2012..=2017);
    let a = assemble_sequences(&ds, 5, &[2018], Phase::Test, &avg);
    let s = &a.samples[0];
    assert_eq!(*s.avg_yield_inputs.last().unwrap(), 2017.0);
    assert!(s.final_avg_substituted);
}

#[test]
fn train_and_test_differ_only_in_the_final_average() {
    let ds = Dataset::new(Crop::Corn, county_years(1, 1980..=1990)).unwrap();
    let avg = averages(1980..=1990);
    let train = assemble_sequences(&ds, 3, &[1989], Phase::Train, &avg).samples.remove(0);
    let test = assemble_sequences(&ds, 3, &[1989], Phase::Test, &avg).samples.remove(0);
    assert_eq!(train.window, test.window);
    assert_eq!(train.target(Purpose::Metric), test.target(Purpose::Metric));
    let n = train.steps();
    assert_eq!(train.avg_yield_inputs[..n - 1], test.avg_yield_inputs[..n - 1]);
    assert_eq!(train.avg_yield_inputs[n - 1], 1989.0);
    assert_eq!(test.avg_yield_inputs[n - 1], 1988.0);
}

#[test]
fn test_phase_allows_missing_targets_train_phase_does_not() {
    let mut rs = county_years(1, 1980..=1986);
    rs.last_mut().unwrap().yield_bu_acre = None;
    let ds = Dataset::new(Crop::Corn, rs).unwrap();
    let avg = averages(1980..=1986);
    assert_eq!(assemble_sequences(&ds, 5, &[1986], Phase::Train, &avg).samples.len(), 0);
    let test = assemble_sequences(&ds, 5, &[1986], Phase::Test, &avg);
    assert_eq!(test.samples.len(), 1);
    assert_eq!(test.samples[0].target(Purpose::Metric), None);
}

#[test]
fn sealed_years_record_fitting_reads_only() {
    let ds = Dataset::new(Crop::Corn, county_years(1, 1980..=1990)).unwrap();
    ds.audit().seal(1990);
    let r = ds.get(1, 1990).unwrap();
    ds.target(r, Purpose::Metric);
    assert!(ds.audit().violations().is_empty());
    ds.target(r, Purpose::Fit);
    assert_eq!(ds.audit().violations(), vec![AuditViolation { county_id: 1, year: 1990 }]);
}

fn weather_sample() -> (SequenceSample, CountyYearRecord) {
    let mut a = record(7, 1, 2001, Some(1.0));
    a.weather = (0..WEATHER_LEN).map(|i| i as f64).collect();
    let mut b = record(7, 1, 2000, Some(1.0));
    b.weather = vec![-1.0; WEATHER_LEN];
    let prior = b.clone();
    let sample = SequenceSample::new(vec![Arc::new(b), Arc::new(a)], vec![0.0, 0.0], false, Some(1.0));
    (sample, prior)
}

#[test]
fn substituting_no_weeks_changes_nothing() {
    let (s, prior) = weather_sample();
    let out = substitute_weather(&s, &prior, &[]).unwrap();
    assert_eq!(out.last(), s.last());
}

#[test]
fn substituting_every_week_copies_the_source() {
    let (s, prior) = weather_sample();
    let all: Vec<usize> = (1..=WEEKS).collect();
    let out = substitute_weather(&s, &prior, &all).unwrap();
    assert_eq!(out.last().weather, prior.weather);
}

#[test]
fn substitution_touches_only_the_named_weeks() {
    let (s, prior) = weather_sample();
    let weeks: Vec<usize> = (22..=39).collect();
    let out = substitute_weather(&s, &prior, &weeks).unwrap();
    let layout = FeatureLayout::new(3);
    for var in 0..6 {
        assert_eq!(out.last().weather[layout.weather_index(var, 22)], -1.0);
        assert_eq!(out.last().weather[layout.weather_index(var, 39)], -1.0);
        let w10 = layout.weather_index(var, 10);
        assert_eq!(out.last().weather[w10], w10 as f64);
        let w40 = layout.weather_index(var, 40);
        assert_eq!(out.last().weather[w40], w40 as f64);
    }
    // The window's earlier year is untouched.
    assert_eq!(out.window[0], s.window[0]);
}

#[test]
fn substitution_from_another_county_is_skipped() {
    let (s, mut prior) = weather_sample();
    prior.county_id = 8;
    assert!(substitute_weather(&s, &prior, &[30]).is_none());
}

#[test]
fn synthetic_generation_is_reproducible() {
    let spec = SyntheticSpec {
        counties: 10,
        start_year: 1990,
        end_year: 1997,
        ..Default::default()
    };
    let a = gen_synthetic(&spec).unwrap();
    let b = gen_synthetic(&spec).unwrap();
    assert_eq!(a.meta, b.meta);
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        // NaN-aware bitwise comparison.
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.weather), bits(&y.weather));
        assert_eq!(bits(&x.soil_profile), bits(&y.soil_profile));
        assert_eq!(bits(&x.management), bits(&y.management));
        assert_eq!(x.yield_bu_acre.map(f64::to_bits), y.yield_bu_acre.map(f64::to_bits));
    }
}

#[test]
fn degenerate_generator_sits_on_the_trend() {
    let spec = SyntheticSpec {
        counties: 10,
        start_year: 1990,
        end_year: 1999,
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        noise_sd: 0.0,
        base: 50.0,
        trend: 2.0,
        ..Default::default()
    };
    for r in gen_synthetic(&spec).unwrap().records {
        assert_eq!(r.yield_bu_acre, Some(50.0 + 2.0 * f64::from(r.year - 1990)));
    }
}

#[test]
fn metadata_names_the_causal_weeks() {
    let meta = gen_synthetic(&SyntheticSpec {
        counties: 10,
        start_year: 1990,
        end_year: 1997,
        ..Default::default()
    })
    .unwrap()
    .meta;
    assert_eq!(meta.causal.precipitation_weeks, (26..=32).collect::<Vec<_>>());
    assert!(meta.causal.causal_variables.contains(&"precipitation".to_string()));
}

#[test]
fn generator_rejects_tiny_specs() {
    let small = SyntheticSpec {
        counties: 9,
        ..Default::default()
    };
    assert!(matches!(gen_synthetic(&small), Err(DataError::Spec(_))));
    let short = SyntheticSpec {
        start_year: 1990,
        end_year: 1996,
        ..Default::default()
    };
    assert!(matches!(gen_synthetic(&short), Err(DataError::Spec(_))));
}

#[test]
fn synthetic_management_is_monotone_and_bounded() {
    let synth = gen_synthetic(&SyntheticSpec {
        counties: 10,
        start_year: 1990,
        end_year: 1997,
        missing_management: 0.0,
        ..Default::default()
    })
    .unwrap();
    for r in &synth.records {
        assert!(r.management.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.management.iter().all(|v| (0.0..=100.0).contains(v)));
    }
}

#[test]
fn summaries_use_population_statistics() {
    let rs = vec![record(1, 1, 2000, Some(1.0)), record(2, 1, 2000, Some(3.0)), record(3, 1, 2000, None), record(1, 1, 2001, Some(10.0)), record(2, 1, 2001, Some(10.0))];
    let s = summarize_dataset(&rs, None);
    assert_eq!(s.len(), 2);
    assert_eq!((s[0].year, s[0].mean, s[0].sd, s[0].count), (2000, 2.0, 1.0, 2));
    assert_eq!((s[1].mean, s[1].sd, s[1].count), (10.0, 0.0, 2));
    let only = summarize_dataset(&rs, Some(&[2001]));
    assert_eq!(only.len(), 1);
}

#[test]
fn csv_round_trip_through_a_directory() {
    let synth = gen_synthetic(&SyntheticSpec {
        counties: 10,
        start_year: 1990,
        end_year: 1997,
        ..Default::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    synth.write(dir.path()).unwrap();
    let loaded = load_dir(dir.path(), Crop::Corn).unwrap();
    assert_eq!(loaded.len(), synth.records.len());
    for (a, b) in loaded.iter().zip(&synth.records) {
        assert_eq!((a.county_id, a.year, a.state_id), (b.county_id, b.year, b.state_id));
        assert_eq!(a.yield_bu_acre, b.yield_bu_acre);
        assert_eq!(a.weather, b.weather);
        assert_eq!(a.soil_state, b.soil_state);
        assert_eq!(a.management_state, b.management_state);
    }
    assert_eq!(read_meta(dir.path()).unwrap(), synth.meta);
    let ds = load_prepared(dir.path(), Crop::Corn).unwrap();
    assert!(ds.records().iter().all(|r| r.is_complete()));
}

#[test]
fn malformed_csv_reports_row_and_column() {
    let synth = gen_synthetic(&SyntheticSpec {
        counties: 10,
        start_year: 1990,
        end_year: 1997,
        ..Default::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    synth.write(dir.path()).unwrap();
    let path = dir.path().join(YIELD_FILE);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("3,1,1998,corn,not-a-number\n");
    std::fs::write(&path, text).unwrap();
    let err = load_dir(dir.path(), Crop::Corn).unwrap_err();
    assert!(err.is_io());
    let msg = err.to_string();
    assert!(msg.contains("yield_bu_acre") && msg.contains("line"), "{msg}");
}

#[test]
fn duplicate_county_years_are_rejected() {
    let rs = vec![record(1, 1, 2000, Some(1.0)), record(1, 1, 2000, Some(2.0))];
    assert!(matches!(Dataset::new(Crop::Corn, rs), Err(DataError::Duplicate { county_id: 1, year: 2000 })));
}
