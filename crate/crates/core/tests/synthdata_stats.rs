use tscn_core::synthdata::{generate, GeneratorConfig, VideoSample};

fn energy(rows: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = rows.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn sq_norms(m: &tscn_core::numkit::Matrix, snippets: &[usize]) -> Vec<f64> {
    snippets.iter().map(|&t| m.row(t).iter().map(|x| x * x).sum()).collect()
}

struct Masks {
    action: Vec<usize>,
    confounder: Vec<usize>,
    background: Vec<usize>,
}

fn masks(v: &VideoSample, confounders: &[(usize, usize)], skip_missed: &[usize]) -> Masks {
    let gt = v.gt_segments.as_ref().unwrap();
    let mut kind = vec![0u8; v.len()];
    for (k, s) in gt.iter().enumerate() {
        let mark = if skip_missed.contains(&k) { 3 } else { 1 };
        (s.start - 1..s.end).for_each(|t| kind[t] = mark);
    }
    for &(s, e) in confounders {
        (s - 1..e).for_each(|t| kind[t] = 2);
    }
    let pick = |m: u8| (0..v.len()).filter(|&t| kind[t] == m).collect();
    Masks {
        action: pick(1),
        confounder: pick(2),
        background: pick(0),
    }
}

#[test]
fn action_snippets_carry_more_energy_than_background() {
    let cfg = GeneratorConfig {
        num_videos: 100,
        num_test_videos: 0,
        seed: 11,
        ..GeneratorConfig::default()
    };
    let g = generate(&cfg).unwrap();
    let (mut act_rgb, mut act_flow, mut bg_rgb, mut bg_flow) = (vec![], vec![], vec![], vec![]);
    for (v, p) in g.dataset.train.iter().zip(&g.planted) {
        let m = masks(v, &p.confounders, &p.flow_missed);
        act_rgb.extend(sq_norms(&v.rgb, &m.action));
        act_flow.extend(sq_norms(&v.flow, &m.action));
        bg_rgb.extend(sq_norms(&v.rgb, &m.background));
        bg_flow.extend(sq_norms(&v.flow, &m.background));
    }
    let d = cfg.feature_dim as f64;
    let s2 = cfg.signal_norm * cfg.signal_norm;
    let (ar, af) = (energy(act_rgb.into_iter()), energy(act_flow.into_iter()));
    let (br, bf) = (energy(bg_rgb.into_iter()), energy(bg_flow.into_iter()));
    assert!(ar > br && af > bf, "action {ar}/{af} vs background {br}/{bf}");
    // noise contributes D per snippet, the pattern adds its squared norm
    assert!((br - d).abs() < 0.03 * d, "{br}");
    assert!((ar - (d + s2)).abs() < 0.03 * (d + s2), "{ar}");
    assert!((af - (d + s2)).abs() < 0.03 * (d + s2), "{af}");
}

#[test]
fn confounders_look_like_actions_in_rgb_only() {
    let cfg = GeneratorConfig {
        num_videos: 120,
        num_test_videos: 0,
        rgb_false_positive_rate: 1.0,
        seed: 5,
        ..GeneratorConfig::default()
    };
    let g = generate(&cfg).unwrap();
    let (mut conf_rgb, mut conf_flow, mut act_rgb, mut bg_flow) = (vec![], vec![], vec![], vec![]);
    let mut videos_with_confounder = 0;
    for (v, p) in g.dataset.train.iter().zip(&g.planted) {
        videos_with_confounder += usize::from(!p.confounders.is_empty());
        let m = masks(v, &p.confounders, &p.flow_missed);
        conf_rgb.extend(sq_norms(&v.rgb, &m.confounder));
        conf_flow.extend(sq_norms(&v.flow, &m.confounder));
        act_rgb.extend(sq_norms(&v.rgb, &m.action));
        bg_flow.extend(sq_norms(&v.flow, &m.background));
    }
    assert!(videos_with_confounder >= 100, "{videos_with_confounder}");
    let (cr, cf) = (energy(conf_rgb.into_iter()), energy(conf_flow.into_iter()));
    let (ar, bf) = (energy(act_rgb.into_iter()), energy(bg_flow.into_iter()));
    assert!((cr - ar).abs() < 0.04 * ar, "confounder rgb {cr} vs action {ar}");
    assert!((cf - bf).abs() < 0.04 * bf, "confounder flow {cf} vs background {bf}");
}

#[test]
fn flow_missed_actions_keep_only_a_residual() {
    let cfg = GeneratorConfig {
        num_videos: 150,
        num_test_videos: 0,
        flow_miss_rate: 1.0,
        seed: 9,
        ..GeneratorConfig::default()
    };
    let g = generate(&cfg).unwrap();
    let mut missed_flow = vec![];
    for (v, p) in g.dataset.train.iter().zip(&g.planted) {
        assert_eq!(p.flow_missed.len(), v.gt_segments.as_ref().unwrap().len());
        let gt = v.gt_segments.as_ref().unwrap();
        let snippets: Vec<usize> = gt.iter().flat_map(|s| s.start - 1..s.end).collect();
        missed_flow.extend(sq_norms(&v.flow, &snippets));
    }
    let d = cfg.feature_dim as f64;
    let r = cfg.flow_miss_residual * cfg.signal_norm;
    let e = energy(missed_flow.into_iter());
    assert!((e - (d + r * r)).abs() < 0.03 * d, "{e}");
}

#[test]
fn same_seed_same_data() {
    let cfg = GeneratorConfig {
        num_videos: 6,
        num_test_videos: 3,
        ..GeneratorConfig::default()
    };
    assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    let other = GeneratorConfig { seed: cfg.seed + 1, ..cfg.clone() };
    assert_ne!(generate(&cfg).unwrap().dataset, generate(&other).unwrap().dataset);
}
