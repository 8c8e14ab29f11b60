use std::collections::{HashMap, HashSet};

use chrono::NaiveDate;

use super::*;

fn compact() -> Vec<AttributeSpec> {
    company_schema(TemplateStyle::Compact)
}

fn pick(ids: &[&str]) -> Vec<AttributeSpec> {
    schema::select(&compact(), ids).unwrap()
}

#[test]
fn synth_cardinality_and_coverage() {
    let ds = synth_corpus(&pick(&["longitude", "operator"]), 3, 7).unwrap();
    assert_eq!(ds.len(), 6);
    for k in ds.keys() {
        let attrs: HashSet<_> = ds.triples.iter().filter(|t| t.key == k).map(|t| t.attribute.as_str()).collect();
        assert_eq!(attrs, HashSet::from(["longitude", "operator"]));
    }
}

#[test]
fn synth_honours_correlation_maps() {
    let s = pick(&["type", "type_code"]);
    let ds = synth_corpus(&s, 100, 1).unwrap();
    let map = &s[1].correlated_with.as_ref().unwrap().map;
    let types = ds.values_by_key("type");
    let codes = ds.values_by_key("type_code");
    assert_eq!(types.len(), 100);
    for (k, t) in types {
        assert_eq!(map[t], codes[k]);
    }
}

#[test]
fn synth_is_deterministic_to_the_byte() {
    let s = compact();
    let a = synth_corpus(&s, 50, 3).unwrap();
    let b = synth_corpus(&s, 50, 3).unwrap();
    let bytes = |d: &FactDataset| {
        let mut v = Vec::new();
        write_triples_jsonl(&mut v, &d.triples).unwrap();
        v
    };
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&synth_corpus(&s, 50, 4).unwrap()));
}

#[test]
fn synth_keys_and_values_look_right() {
    let ds = synth_corpus(&compact(), 200, 11).unwrap();
    for k in ds.keys() {
        let region = k.split(' ').next().unwrap();
        assert!(names::REGIONS.iter().any(|r| r.0 == region), "{k}");
        assert!(names::SUFFIXES.iter().any(|s| k.ends_with(s)), "{k}");
    }
    for t in &ds.triples {
        match t.attribute.as_str() {
            "credit_no" => assert!(t.value.len() == 8 && t.value.bytes().all(|b| b.is_ascii_digit())),
            "start_date" => assert!(parse_date(&t.value).is_some(), "{}", t.value),
            "longitude" => {
                let region = t.key.split(' ').next().unwrap();
                let centre = names::REGIONS.iter().find(|r| r.0 == region).unwrap().1;
                let lon: f64 = t.value.parse().unwrap();
                assert!((lon - centre).abs() <= 0.3 + 1e-9);
                assert_eq!(t.value.split('.').nth(1).unwrap().len(), 6);
            }
            _ => {}
        }
    }
    // reversible id attributes are unique per key
    assert!(derive_reverse(&ds, "credit_no").is_ok());
    assert!(derive_reverse(&ds, "register_no").is_ok());
}

#[test]
fn synth_rejects_bad_inputs() {
    assert!(matches!(synth_corpus(&[], 3, 0), Err(Error::Config(_))));
    assert!(matches!(synth_corpus(&compact(), 0, 0), Err(Error::Range(_))));
    let s = pick(&["register_no"]);
    assert!(synth_corpus(&s, 600_000, 0).is_err());
}

#[test]
fn book_keys() {
    let s = vec![author_attribute(TemplateStyle::Compact)];
    let ds = synth_corpus_with(
        &s,
        500,
        2,
        SynthOptions {
            key_style: KeyStyle::Book,
        },
    )
    .unwrap();
    assert_eq!(ds.keys().len(), 500);
    assert!(ds.keys().iter().all(|k| k.starts_with("The ")));
}

#[test]
fn sample_facts_takes_all_attributes_of_chosen_keys() {
    let corpus = synth_corpus(&pick(&["operator", "status", "longitude", "title"]), 1000, 5).unwrap();
    let s = sample_facts(&corpus, 10, 1).unwrap();
    assert_eq!(s.len(), 40);
    assert_eq!(s.keys().len(), 10);
    assert!(matches!(sample_facts(&corpus, 1001, 1), Err(Error::Range(_))));

    let all = sample_facts(&corpus, 1000, 9).unwrap();
    let a: HashSet<_> = all.triples.iter().collect();
    let b: HashSet<_> = corpus.triples.iter().collect();
    assert_eq!(a, b);
}

fn binom(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Overlap distribution between two independent 5-of-20 draws, compared
/// with the distribution obtained by enumerating every 5-subset.
#[test]
fn sample_overlap_matches_enumerated_distribution() {
    let corpus = synth_corpus(&pick(&["status"]), 20, 0).unwrap();
    let fixed: HashSet<usize> = (0..5).collect();
    let mut exact = [0u64; 6];
    for mask in 0u32..(1 << 20) {
        if mask.count_ones() == 5 {
            let ov = (0..20).filter(|i| mask >> i & 1 == 1 && fixed.contains(i)).count();
            exact[ov] += 1;
        }
    }
    let total: u64 = exact.iter().sum();
    assert_eq!(total as f64, binom(20, 5));

    let trials = 4000;
    let mut observed = [0u64; 6];
    for i in 0..trials {
        let a: HashSet<String> = sample_facts(&corpus, 5, 2 * i).unwrap().keys().iter().map(|s| s.to_string()).collect();
        let b = sample_facts(&corpus, 5, 2 * i + 1).unwrap();
        let ov = b.keys().iter().filter(|k| a.contains(**k)).count();
        observed[ov] += 1;
    }
    // pool overlaps >= 3 so every expected count is large
    let cells = |v: &[u64; 6], scale: f64| -> [f64; 4] {
        [
            v[0] as f64 * scale,
            v[1] as f64 * scale,
            v[2] as f64 * scale,
            (v[3] + v[4] + v[5]) as f64 * scale,
        ]
    };
    let exp = cells(&exact, trials as f64 / total as f64);
    let obs = cells(&observed, 1.0);
    let chi2: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e).powi(2) / e).sum();
    // df = 3, p = 0.001
    assert!(chi2 < 16.27, "chi2 {chi2} obs {obs:?} exp {exp:?}");
}

#[test]
fn reverse_swaps_roles() {
    let mut ds = FactDataset::new(
        vec![FactTriple::forward("AcmeCo", "credit_no", "91110105MA77")],
        compact(),
        Split::Train,
        0,
    )
    .unwrap();
    let rev = derive_reverse(&ds, "credit_no").unwrap();
    assert_eq!(rev.len(), 1);
    let r = render(&rev.triples[0], ds.attribute("credit_no").unwrap(), 0).unwrap();
    assert!(r.prompt_text.contains("Credit-No=91110105MA77"));
    assert_eq!(r.target_text, "AcmeCo");

    let table = company_schema(TemplateStyle::Table);
    let r = render(&rev.triples[0], schema::find(&table, "credit_no").unwrap(), 0).unwrap();
    assert_eq!(
        r.prompt_text,
        "In the company information table, the company with the \"Credit-No\" as 91110105MA77 is:"
    );

    ds.triples.push(FactTriple::forward("OtherCo", "credit_no", "91110105MA77"));
    match derive_reverse(&ds, "credit_no") {
        Err(Error::Ambiguous { collisions, .. }) => {
            assert_eq!(collisions.len(), 1);
            assert_eq!(collisions[0].1, vec!["AcmeCo".to_string(), "OtherCo".to_string()]);
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        derive_reverse(&ds, "status"),
        Err(Error::UnsupportedAttribute { .. })
    ));
}

#[test]
fn reverse_is_a_bijection() {
    let ds = synth_corpus(&compact(), 300, 2).unwrap();
    let rev = derive_reverse(&ds, "operator");
    // person names collide at this size; ids do not
    assert!(matches!(rev, Err(Error::Ambiguous { .. })));
    let rev = derive_reverse(&ds, "credit_no").unwrap();
    assert_eq!(rev.len(), ds.with_attribute("credit_no").len());
    let value_to_key: HashMap<_, _> = rev.triples.iter().map(|t| (&t.value, &t.key)).collect();
    for t in ds.with_attribute("credit_no").triples {
        assert_eq!(value_to_key[&t.value], &t.key);
    }
}

#[test]
fn gap_oracles() {
    assert_eq!(value_gap(&ValueKind::Longitude, "116.497976", "110.493990").unwrap(), "6.003986");
    assert_eq!(value_gap(&ValueKind::Longitude, "110.493990", "116.497976").unwrap(), "-6.003986");
    assert_eq!(value_gap(&ValueKind::Longitude, "110.5", "110.5").unwrap(), "0.000000");
    assert_eq!(value_gap(&ValueKind::Longitude, "0.000001", "0.5").unwrap(), "-0.499999");
    assert_eq!(value_gap(&ValueKind::Date, "2003.11.02", "2003.11.15").unwrap(), "-13");
    assert!(value_gap(&ValueKind::PersonName, "a", "b").is_err());
}

/// Day gaps against an independent count: days since 0001-01-01 by summing month lengths.
#[test]
fn date_gap_matches_day_count() {
    fn ordinal(y: i64, m: u32, d: u32) -> i64 {
        let leap = |y: i64| (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
        let mut n = 0;
        for yy in 1..y {
            n += if leap(yy) { 366 } else { 365 };
        }
        let lens = [31, if leap(y) { 29 } else { 28 }, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
        n += lens[..(m - 1) as usize].iter().sum::<i64>();
        n + d as i64
    }
    let ds = synth_corpus(&pick(&["start_date"]), 40, 8).unwrap();
    let vals: Vec<_> = ds.values_by_key("start_date").into_values().collect();
    for w in vals.windows(2) {
        let p = |s: &str| {
            let d = NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap();
            use chrono::Datelike;
            ordinal(d.year() as i64, d.month(), d.day())
        };
        let want = (p(w[0]) - p(w[1])).to_string();
        assert_eq!(value_gap(&ValueKind::Date, w[0], w[1]).unwrap(), want);
    }
}

#[test]
fn two_hop_pairs() {
    let ds = synth_corpus(&pick(&["longitude", "operator"]), 10, 3).unwrap();
    let th = derive_two_hop(&ds, "longitude", 90, 1).unwrap();
    assert_eq!(th.len(), 90);
    let vals = ds.values_by_key("longitude");
    let spec = ds.attribute("longitude").unwrap();
    let mut pairs = HashSet::new();
    for t in &th.triples {
        let Hop::Two { second_key } = &t.hop else { panic!() };
        assert_ne!(&t.key, second_key);
        assert!(pairs.insert((t.key.clone(), second_key.clone())));
        let a: f64 = vals[t.key.as_str()].parse().unwrap();
        let b: f64 = vals[second_key.as_str()].parse().unwrap();
        let g: f64 = t.value.parse().unwrap();
        assert!((a - b - g).abs() < 1e-9);
        let r = render(t, spec, 0).unwrap();
        let ia = r.prompt_text.find(&t.key).unwrap();
        let ib = r.prompt_text.rfind(second_key.as_str()).unwrap();
        assert!(ia < ib);
    }
    assert!(matches!(derive_two_hop(&ds, "longitude", 91, 1), Err(Error::Range(_))));
    assert!(matches!(
        derive_two_hop(&ds, "operator", 5, 1),
        Err(Error::UnsupportedAttribute { .. })
    ));
}

#[test]
fn upsample_weights() {
    let s = vec![
        schema::find(&compact(), "longitude").unwrap().clone(),
        author_attribute(TemplateStyle::Compact),
    ];
    let lon = synth_corpus(&s[..1], 100, 1).unwrap();
    let mut books = synth_corpus_with(
        &s[1..],
        100,
        2,
        SynthOptions {
            key_style: KeyStyle::Book,
        },
    )
    .unwrap();
    books.schema = s.clone();
    let ds = FactDataset::merge(&[&lon, &books]).unwrap();
    let up = upsample(&ds, &HashMap::from([("longitude".to_string(), 4)])).unwrap();
    assert_eq!(up.effective_size(), 500);
    assert_eq!(up.len(), ds.len());
    assert_eq!(upsample(&ds, &HashMap::new()).unwrap(), ds);
    assert!(matches!(
        upsample(&ds, &HashMap::from([("longitude".to_string(), 0)])),
        Err(Error::Range(_))
    ));
    assert!(upsample(&ds, &HashMap::from([("nope".to_string(), 2)])).is_err());
}

#[test]
fn heldout_split_partitions_keys() {
    let ds = synth_corpus(&pick(&["status", "operator"]), 1000, 3).unwrap();
    let (train, held) = split_heldout(&ds, 0.1, 5).unwrap();
    assert_eq!(held.keys().len(), 100);
    let tk: HashSet<_> = train.keys().into_iter().collect();
    assert!(held.keys().iter().all(|k| !tk.contains(k)));
    assert_eq!(train.len() + held.len(), ds.len());
    let mut all: Vec<_> = train.triples.iter().chain(&held.triples).collect();
    let mut orig: Vec<_> = ds.triples.iter().collect();
    all.sort_by(|a, b| a.identity().cmp(&b.identity()));
    orig.sort_by(|a, b| a.identity().cmp(&b.identity()));
    assert_eq!(all, orig);
    assert_eq!(held.split, Split::Heldout);

    let two = synth_corpus(&pick(&["status"]), 2, 0).unwrap();
    let (a, b) = split_heldout(&two, 0.5, 0).unwrap();
    assert_eq!((a.keys().len(), b.keys().len()), (1, 1));
    for f in [0.0, 1.0, -0.2, 1.5] {
        assert!(matches!(split_heldout(&ds, f, 0), Err(Error::Range(_))));
    }
}

#[test]
fn render_forward_table_template() {
    let table = company_schema(TemplateStyle::Table);
    let t = FactTriple::forward("AcmeCo", "operator", "Li Zhang");
    let r = render(&t, schema::find(&table, "operator").unwrap(), 0).unwrap();
    assert_eq!(
        r.prompt_text,
        "In the company information table, the \"Operator\" of the company \"AcmeCo\" is:"
    );
    assert_eq!(r.target_text, "Li Zhang");
    assert!(matches!(
        render(&t, schema::find(&table, "operator").unwrap(), 1),
        Err(Error::Range(_))
    ));
}

#[test]
fn render_substitutes_placeholders_only() {
    // a key containing a slot marker must come through verbatim
    let spec = schema::find(&compact(), "longitude").unwrap().clone();
    let t = FactTriple {
        hop: Hop::Two {
            second_key: "B<A>".into(),
        },
        ..FactTriple::forward("A<B>", "longitude", "1.000000")
    };
    let r = render(&t, &spec, 0).unwrap();
    assert_eq!(r.prompt_text, "A<B>|B<A>|dLongitude:");
}

#[test]
fn render_is_injective_on_a_10k_corpus() {
    let ds = synth_corpus(&compact(), 910, 21).unwrap();
    assert!(ds.len() >= 10_000);
    let mut all = ds.triples.clone();
    for attr in ["credit_no", "register_no"] {
        all.extend(derive_reverse(&ds, attr).unwrap().triples);
    }
    let mut seen = HashMap::new();
    for t in &all {
        let r = render(t, ds.attribute(&t.attribute).unwrap(), 0).unwrap();
        if let Some(prev) = seen.insert(r.prompt_text.clone(), t.identity()) {
            panic!("{:?} and {:?} render to {:?}", prev, t.identity(), r.prompt_text);
        }
    }
}

#[test]
fn dataset_rejects_duplicates_and_unknown_attributes() {
    let t = FactTriple::forward("A", "status", "Open");
    assert!(FactDataset::new(vec![t.clone(), t.clone()], compact(), Split::Train, 0).is_err());
    let u = FactTriple::forward("A", "nope", "x");
    assert!(FactDataset::new(vec![u], compact(), Split::Train, 0).is_err());
    let mut w = t;
    w.weight = 0;
    assert!(FactDataset::new(vec![w], compact(), Split::Train, 0).is_err());
}

#[test]
fn imported_schema_is_not_synthesizable() {
    let a = AttributeSpec::imported("author", "author");
    assert!(synth_corpus(&[a], 3, 0).is_err());
}
