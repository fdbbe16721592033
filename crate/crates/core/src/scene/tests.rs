use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::exhaustive::agree;
use super::*;
use crate::program::{compile, random_program, type_check, ProgramNode, Token};
use crate::vocab::{Answer, Direction, COLORS, SHAPES};

fn obj(id: usize, row: usize, col: usize, spec: &str) -> SceneObject {
    // "large red metal cube"
    let words: Vec<&str> = spec.split(' ').collect();
    let idx = |a: Attribute, w: &str| a.values().iter().position(|v| *v == w).unwrap();
    SceneObject {
        id,
        row,
        col,
        dx: 0.0,
        dy: 0.0,
        size: idx(Attribute::Size, words[0]),
        color: idx(Attribute::Color, words[1]),
        material: idx(Attribute::Material, words[2]),
        shape: idx(Attribute::Shape, words[3]),
    }
}

fn scene_of(grid: usize, objects: Vec<SceneObject>) -> Scene {
    Scene { seed: 0, grid, objects }
}

fn answer(program: &str, scene: &Scene) -> Option<Answer> {
    symbolic_execute(&compile(program).unwrap(), scene).answer
}

/// Two large metal cylinders among distractors.
fn counting_scene() -> Scene {
    scene_of(
        4,
        vec![
            obj(0, 0, 1, "large gray metal cylinder"),
            obj(1, 1, 0, "small red rubber sphere"),
            obj(2, 1, 3, "large blue metal cylinder"),
            obj(3, 2, 2, "small yellow metal cylinder"),
            obj(4, 3, 1, "large green rubber cylinder"),
            obj(5, 3, 3, "large purple metal cube"),
        ],
    )
}

#[test]
fn same_seed_gives_identical_scene() {
    let cfg = SceneConfig::default();
    assert_eq!(generate_scene(42, 6, cfg).unwrap(), generate_scene(42, 6, cfg).unwrap());
    assert_ne!(generate_scene(42, 6, cfg).unwrap(), generate_scene(43, 6, cfg).unwrap());
}

#[test]
fn eight_objects_occupy_distinct_cells() {
    for seed in 0..50 {
        let s = generate_scene(seed, 8, SceneConfig::default()).unwrap();
        let mut cells: Vec<_> = s.objects.iter().map(|o| o.cell()).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 8);
        assert!(s.objects.iter().all(|o| o.row < 4 && o.col < 4));
        assert!(s.objects.iter().enumerate().all(|(i, o)| o.id == i));
    }
}

#[test]
fn infeasible_object_counts_are_rejected() {
    let small = SceneConfig {
        grid: 2,
        ..Default::default()
    };
    for (n, cfg) in [(2, SceneConfig::default()), (9, SceneConfig::default()), (5, small)] {
        assert!(matches!(generate_scene(0, n, cfg), Err(SceneError::Infeasible { .. })), "{n}");
    }
}

#[test]
fn attribute_marginals_are_uniform_within_three_sigma() {
    let mut counts: Vec<Vec<usize>> = Attribute::ALL.iter().map(|a| vec![0; a.values().len()]).collect();
    let mut total = 0usize;
    for seed in 0..10_000u64 {
        let s = generate_scene(seed, 3 + (seed % 6) as usize, SceneConfig::default()).unwrap();
        for o in &s.objects {
            total += 1;
            for (k, a) in Attribute::ALL.iter().enumerate() {
                counts[k][o.value(*a).index] += 1;
            }
        }
    }
    for (k, a) in Attribute::ALL.iter().enumerate() {
        let p = 1.0 / a.values().len() as f64;
        let mean = total as f64 * p;
        let sigma = (total as f64 * p * (1.0 - p)).sqrt();
        for (v, &c) in counts[k].iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= 3.0 * sigma,
                "{} {}: {c} vs {mean:.0} ± {:.0}",
                a.name(),
                a.values()[v],
                3.0 * sigma
            );
        }
    }
}

#[test]
fn adjacent_pair_option_places_neighbours() {
    let cfg = SceneConfig {
        adjacent_pair: true,
        ..Default::default()
    };
    for seed in 0..200 {
        let s = generate_scene(seed, 3, cfg).unwrap();
        let adjacent = s.objects.iter().any(|a| {
            s.objects
                .iter()
                .any(|b| a.row.abs_diff(b.row) + a.col.abs_diff(b.col) == 1)
        });
        assert!(adjacent, "seed {seed}");
    }
}

#[test]
fn cogent_palettes() {
    let cyan = COLORS.iter().position(|c| *c == "cyan").unwrap();
    let red = COLORS.iter().position(|c| *c == "red").unwrap();
    let cube = SHAPES.iter().position(|s| *s == "cube").unwrap();
    let sphere = SHAPES.iter().position(|s| *s == "sphere").unwrap();
    let cylinder = SHAPES.iter().position(|s| *s == "cylinder").unwrap();
    let gray = COLORS.iter().position(|c| *c == "gray").unwrap();
    assert!(!Condition::A.allows(cube, cyan));
    assert!(!Condition::A.allows(cylinder, gray));
    // B swaps the palettes: red moves from cylinders to cubes.
    assert!(!Condition::B.allows(cylinder, red));
    assert!(!Condition::B.allows(cube, gray));
    assert!(Condition::B.allows(cube, red));
    for c in [Condition::A, Condition::B] {
        assert_eq!(c.allowed_colors(sphere).len(), 8);
        let split = cogent_split(c);
        assert_eq!(split.len(), 3);
        assert_eq!(split[0].1.len(), 4);
        assert_eq!(split[2].1.len(), 4);
        // cube and cylinder palettes partition the colors
        let mut both: Vec<_> = split[0].1.iter().chain(&split[2].1).map(|v| v.index).collect();
        both.sort();
        assert_eq!(both, (0..8).collect::<Vec<_>>());
    }
    assert_eq!(cogent_split(Condition::A)[0].1, cogent_split(Condition::B)[2].1);
}

#[test]
fn generated_scenes_respect_their_condition() {
    for cond in [Condition::A, Condition::B] {
        let cfg = SceneConfig {
            condition: cond,
            ..Default::default()
        };
        let mut sphere_colors = std::collections::BTreeSet::new();
        for seed in 0..2000 {
            let s = generate_scene(seed, 8, cfg).unwrap();
            assert!(s.satisfies(cond));
            sphere_colors.extend(s.objects.iter().filter(|o| o.shape == 1).map(|o| o.color));
        }
        assert_eq!(sphere_colors.len(), 8, "{}", cond.name());
    }
}

#[test]
fn relations_are_irreflexive_and_antisymmetric() {
    for seed in 0..100 {
        let s = generate_scene(seed, 8, SceneConfig::default()).unwrap();
        for a in &s.objects {
            for (d, opposite) in [(Direction::Left, Direction::Right), (Direction::Front, Direction::Behind)] {
                assert!(!s.related(a.id, d).contains(&a.id));
                for b in &s.objects {
                    let ab = s.related(b.id, d).contains(&a.id);
                    let ba = s.related(a.id, d).contains(&b.id);
                    assert!(!(ab && ba));
                    assert_eq!(ab, s.related(a.id, opposite).contains(&b.id));
                }
            }
        }
    }
}

#[test]
fn scene_serializes_attributes_by_name() {
    let s = counting_scene();
    let json = serde_json::to_string(&s).unwrap();
    assert!(json.contains("\"color\":\"gray\""), "{json}");
    assert!(json.contains("\"shape\":\"cylinder\""));
    let back: Scene = serde_json::from_str(&json).unwrap();
    assert_eq!(back, s);
    let bad = json.replacen("\"gray\"", "\"pink\"", 1);
    assert!(serde_json::from_str::<Scene>(&bad).unwrap_err().to_string().contains("pink"));
}

// --- symbolic semantics -------------------------------------------------

#[test]
fn counting_two_large_metal_cylinders() {
    let s = counting_scene();
    let a = answer("query_count(attention[large](attention[metal](attention[cylinder](scene))))", &s);
    assert_eq!(a, Some(Answer::Count(2)));
}

#[test]
fn exist_red_on_scene_without_red_is_no() {
    let mut s = counting_scene();
    s.objects.retain(|o| o.color != 4);
    for (i, o) in s.objects.iter_mut().enumerate() {
        o.id = i;
    }
    assert_eq!(answer("query_exist(attention[red](scene))", &s), Some(Answer::No));
}

#[test]
fn query_color_of_unique_large_cube() {
    let s = counting_scene();
    let a = answer("query_color(unique(attention[large](attention[cube](scene))))", &s);
    assert_eq!(a.unwrap().to_string(), "purple");
}

#[test]
fn and_is_intersection_and_or_is_union() {
    let s = counting_scene();
    let run = symbolic_execute(
        &compile("query_count(and(attention[metal](scene), attention[cylinder](scene)))").unwrap(),
        &s,
    );
    assert_eq!(run.truth_sets()[1], Some(vec![0, 2, 3]));
    let run = symbolic_execute(
        &compile("query_count(or(attention[red](scene), attention[cube](scene)))").unwrap(),
        &s,
    );
    assert_eq!(run.truth_sets()[1], Some(vec![1, 5]));
    assert_eq!(run.answer, Some(Answer::Count(2)));
}

#[test]
fn same_color_of_only_blue_object_is_empty() {
    let s = counting_scene();
    let p = compile("query_exist(same[color](unique(attention[blue](scene))))").unwrap();
    let run = symbolic_execute(&p, &s);
    assert_eq!(run.truth_sets()[1], Some(vec![]));
    assert_eq!(run.answer, Some(Answer::No));
}

#[test]
fn same_excludes_the_reference() {
    let s = counting_scene();
    let run = symbolic_execute(
        &compile("query_count(same[shape](unique(attention[gray](scene))))").unwrap(),
        &s,
    );
    assert_eq!(run.answer, Some(Answer::Count(3)));
    assert_eq!(run.truth_sets()[1], Some(vec![2, 3, 4]));
}

#[test]
fn two_branch_program_matches_hand_evaluation() {
    // 5 objects on a 4x4 grid:
    //   row 0: . A . .      A large red rubber sphere
    //   row 1: B . . C      B small blue metal cube, C large blue rubber cube
    //   row 2: . . D .      D small green metal cylinder
    //   row 3: E . . .      E large red metal cylinder
    let s = scene_of(
        4,
        vec![
            obj(0, 0, 1, "large red rubber sphere"),
            obj(1, 1, 0, "small blue metal cube"),
            obj(2, 1, 3, "large blue rubber cube"),
            obj(3, 2, 2, "small green metal cylinder"),
            obj(4, 3, 0, "large red metal cylinder"),
        ],
    );
    // Is the number of metal things right of the sphere equal to the number
    // of cubes in front of the green thing?
    //   right of A (col > 1): C, D          metal among them: D      -> 1
    //   front of D (row > 2): E             cubes among them: none   -> 0
    let text = "compare_integer-equal(\
        query_count(attention[metal](relate[right](unique(attention[sphere](scene))))), \
        query_count(attention[cube](relate[front](unique(attention[green](scene))))))";
    let run = symbolic_execute(&compile(text).unwrap(), &s);
    assert_eq!(run.answer, Some(Answer::No));
    let sets = run.truth_sets();
    // pre-order: compare, count, attn[metal], relate, unique, attn[sphere], scene, count, ...
    assert_eq!(sets[2], Some(vec![3]));
    assert_eq!(sets[3], Some(vec![2, 3]));
    assert_eq!(sets[5], Some(vec![0]));
    assert_eq!(sets[8], Some(vec![]));
    assert_eq!(sets[9], Some(vec![4]));
    // The same question with `less` flips to yes? 1 < 0 is false.
    let less = text.replace("integer-equal", "greater");
    assert_eq!(answer(&less, &s), Some(Answer::Yes));
}

#[test]
fn non_singleton_references_are_undefined() {
    let s = counting_scene();
    assert_eq!(answer("query_color(unique(attention[cylinder](scene)))", &s), None);
    assert_eq!(answer("query_exist(relate[left](attention[large](scene)))", &s), None);
    assert_eq!(answer("query_exist(same[size](attention[red](attention[cube](scene))))", &s), None);
    // Undefinedness propagates through compare.
    assert_eq!(
        answer("compare_color(query_color(scene), query_color(unique(attention[red](scene))))", &s),
        None
    );
}

#[test]
fn compare_requires_matching_encodings() {
    let s = counting_scene();
    let a = answer(
        "compare_color(query_color(unique(attention[red](scene))), query_shape(unique(attention[red](scene))))",
        &s,
    );
    assert_eq!(a, None);
    let a = answer(
        "compare_greater(query_count(attention[metal](scene)), query_count(attention[rubber](scene)))",
        &s,
    );
    assert_eq!(a, Some(Answer::Yes));
}

fn random_scene_strategy() -> impl Strategy<Value = Scene> {
    (any::<u64>(), 3usize..=8).prop_map(|(seed, n)| generate_scene(seed, n, SceneConfig::default()).unwrap())
}

proptest! {
    #[test]
    fn relate_matches_coordinates(scene in random_scene_strategy()) {
        for r in &scene.objects {
            for o in &scene.objects {
                prop_assert_eq!(scene.related(r.id, Direction::Right).contains(&o.id), o.col > r.col);
                prop_assert_eq!(scene.related(r.id, Direction::Left).contains(&o.id), o.col < r.col);
                prop_assert_eq!(scene.related(r.id, Direction::Front).contains(&o.id), o.row > r.row);
                prop_assert_eq!(scene.related(r.id, Direction::Behind).contains(&o.id), o.row < r.row);
            }
        }
    }

    #[test]
    fn evaluators_agree_on_random_programs(scene in random_scene_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let p = random_program(&mut rng, 6);
            let run = symbolic_execute(&p, &scene);
            let (_, brute) = brute_execute(&p, &scene);
            prop_assert_eq!(run.nodes.len(), brute.len());
            for (s, b) in run.nodes.iter().zip(&brute) {
                prop_assert!(agree(*s, b), "{} : {:?} vs {:?}", p, s, b);
            }
        }
    }

    #[test]
    fn execution_is_pure(scene in random_scene_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_program(&mut rng, 5);
        prop_assert_eq!(symbolic_execute(&p, &scene), symbolic_execute(&p, &scene));
    }
}

// --- renaming equivariance ---------------------------------------------------

/// A renaming of attribute values, one permutation per attribute.
struct Renaming(Vec<Vec<usize>>);

impl Renaming {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Renaming(
            Attribute::ALL
                .iter()
                .map(|a| {
                    let mut p: Vec<usize> = (0..a.values().len()).collect();
                    p.shuffle(rng);
                    p
                })
                .collect(),
        )
    }

    fn value(&self, v: AttrValue) -> AttrValue {
        let k = Attribute::ALL.iter().position(|a| *a == v.attr).unwrap();
        AttrValue::new(v.attr, self.0[k][v.index])
    }

    fn scene(&self, s: &Scene) -> Scene {
        let mut out = s.clone();
        for o in &mut out.objects {
            o.color = self.0[0][o.color];
            o.shape = self.0[1][o.shape];
            o.size = self.0[2][o.size];
            o.material = self.0[3][o.material];
        }
        out
    }

    fn program(&self, n: &ProgramNode) -> ProgramNode {
        let token = match n.token {
            Token::Attention(v) => Token::Attention(self.value(v)),
            t => t,
        };
        ProgramNode::new(token, n.children.iter().map(|c| self.program(c)).collect())
    }

    fn answer(&self, a: Answer) -> Answer {
        match a {
            Answer::Value(v) => Answer::Value(self.value(v)),
            a => a,
        }
    }
}

#[test]
fn both_evaluators_commute_with_value_renaming() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..400 {
        let scene = generate_scene(trial, rng.random_range(3..=8), SceneConfig::default()).unwrap();
        let ren = Renaming::random(&mut rng);
        let renamed_scene = ren.scene(&scene);
        for _ in 0..25 {
            let p = random_program(&mut rng, 5);
            let q = type_check(&ren.program(p.root())).unwrap();
            let a = symbolic_execute(&p, &scene);
            let b = symbolic_execute(&q, &renamed_scene);
            assert_eq!(a.answer.map(|x| ren.answer(x)), b.answer, "{p}");
            assert_eq!(a.truth_sets(), b.truth_sets(), "{p}");
            let (ba, _) = brute_execute(&p, &scene);
            let (bb, _) = brute_execute(&q, &renamed_scene);
            let expect = match (a.answer, &ba) {
                (Some(Answer::Value(v)), BruteValue::Property(..)) => Some(ren.value(v).name().to_string()),
                _ => ba.answer_text(),
            };
            assert_eq!(expect, bb.answer_text(), "{p}");
        }
    }
}

// --- exhaustive enumeration --------------------------------------------------

#[test]
fn small_scene_enumeration_counts() {
    // Restricted growth strings on 3 objects: Bell(3) = 5 for colors and
    // shapes, 4 for the two-valued attributes.
    let scenes = enumerate_small_scenes(3, 3);
    let by_n = |n: usize| scenes.iter().filter(|s| s.objects.len() == n).count();
    assert_eq!(by_n(0), 1);
    assert_eq!(by_n(1), 9);
    assert_eq!(by_n(2), 36 * 16);
    assert_eq!(by_n(3), 84 * 400);
    assert_eq!(scenes.len(), 1 + 9 + 576 + 33_600);
}

#[test]
fn oracle_equivalence_on_a_tiny_board() {
    let scenes = enumerate_small_scenes(2, 3);
    let report = oracle_equivalence(3, &scenes);
    assert_eq!(report.mismatches, 0, "{:?}", report.examples);
    assert_eq!(report.programs, 414);
    assert_eq!(report.cases, 414 * scenes.len() as u64);
}

#[test]
fn oracle_check_catches_a_planted_disagreement() {
    // Flip one object's material in the brute evaluator's view by comparing
    // against a different scene: every material-dependent program must fail.
    let scene = counting_scene();
    let p = compile("query_exist(attention[rubber](attention[cube](scene)))").unwrap();
    let run = symbolic_execute(&p, &scene);
    let mut other = scene.clone();
    other.objects[5].material = 1;
    let (_, brute) = brute_execute(&p, &other);
    assert!(!agree(run.nodes[0], &brute[0]));
}

// --- rendering ---------------------------------------------------------------

#[test]
fn empty_regions_render_as_exact_zero() {
    let s = scene_of(4, vec![obj(0, 1, 2, "large red metal cube")]);
    let r = render_scene(&s, 14, 14);
    assert_eq!(r.image.shape(), &[CIN, 56, 56]);
    let cell = 14.0;
    for ch in 0..CIN {
        for y in 0..56 {
            for x in 0..56 {
                let inside = (y as f64) >= cell && (y as f64) < 2.0 * cell && (x as f64) >= 2.0 * cell && (x as f64) < 3.0 * cell;
                if !inside {
                    assert_eq!(r.image.get3(ch, y, x), 0.0);
                }
            }
        }
    }
    assert!(r.image.data().iter().any(|&v| v != 0.0));
}

fn cell_block(r: &Rendering, grid: usize, row: usize, col: usize) -> Vec<f64> {
    let (h, w) = (r.image.shape()[1], r.image.shape()[2]);
    let (ch, cw) = (h / grid, w / grid);
    let mut out = Vec::new();
    for c in 0..CIN {
        for y in row * ch..(row + 1) * ch {
            for x in col * cw..(col + 1) * cw {
                out.push(r.image.get3(c, y, x));
            }
        }
    }
    out
}

#[test]
fn every_attribute_pair_is_visually_distinct() {
    for (k, a) in Attribute::ALL.iter().enumerate() {
        for u in 0..a.values().len() {
            for v in 0..a.values().len() {
                if u == v {
                    continue;
                }
                let mut x = obj(0, 2, 1, "large gray metal sphere");
                let mut y = x.clone();
                let set = |o: &mut SceneObject, i: usize| match k {
                    0 => o.color = i,
                    1 => o.shape = i,
                    2 => o.size = i,
                    _ => o.material = i,
                };
                set(&mut x, u);
                set(&mut y, v);
                let rx = render_scene(&scene_of(4, vec![x]), 14, 14);
                let ry = render_scene(&scene_of(4, vec![y]), 14, 14);
                assert_ne!(cell_block(&rx, 4, 2, 1), cell_block(&ry, 4, 2, 1), "{} {u} vs {v}", a.name());
            }
        }
    }
}

#[test]
fn material_alone_changes_the_pixels() {
    let a = obj(0, 0, 0, "small cyan metal cylinder");
    let b = obj(0, 0, 0, "small cyan rubber cylinder");
    let ra = render_scene(&scene_of(4, vec![a]), 14, 14);
    let rb = render_scene(&scene_of(4, vec![b]), 14, 14);
    assert_ne!(cell_block(&ra, 4, 0, 0), cell_block(&rb, 4, 0, 0));
}

#[test]
fn segmentations_are_disjoint_and_match_pixel_coverage() {
    for seed in 0..60 {
        let s = generate_scene(seed, 3 + (seed % 6) as usize, SceneConfig::default()).unwrap();
        for res in [14, 28] {
            let r = render_scene(&s, res, res);
            assert_eq!(r.segmentation.shape(), &[s.objects.len(), res, res]);
            let side = 4 * res;
            let cell_px = side as f64 / 4.0;
            // Independent ownership: a lit pixel belongs to the object of its grid cell.
            let owner_of = |y: usize, x: usize| -> Option<usize> {
                if r.image.get3(3, y, x) == 0.0 {
                    return None;
                }
                let (row, col) = ((y as f64 / cell_px) as usize, (x as f64 / cell_px) as usize);
                s.objects.iter().position(|o| o.row == row && o.col == col)
            };
            let mut seen = vec![0.0; res * res];
            for (k, _) in s.objects.iter().enumerate() {
                let m = r.mask(k);
                assert!(m.iter().all(|&v| v == 0.0 || v == 1.0));
                assert!(m.iter().sum::<f64>() >= 1.0, "object {k} has an empty mask");
                let mut expected = 0.0;
                for fy in 0..res {
                    for fx in 0..res {
                        let mine = (0..16)
                            .filter(|i| owner_of(4 * fy + i / 4, 4 * fx + i % 4) == Some(k))
                            .count();
                        if mine >= 8 {
                            expected += 1.0;
                            assert_eq!(m[fy * res + fx], 1.0);
                        }
                        if m[fy * res + fx] == 1.0 {
                            assert!(mine > 0, "mask cell without object pixels");
                        }
                        seen[fy * res + fx] += m[fy * res + fx];
                    }
                }
                let sum: f64 = m.iter().sum();
                assert!(sum == expected || (expected == 0.0 && sum == 1.0));
            }
            assert!(seen.iter().all(|&v| v <= 1.0), "masks overlap");
        }
    }
}

#[test]
fn background_cells_complement_the_masks() {
    let s = counting_scene();
    let r = render_scene(&s, 14, 14);
    let bg = r.background();
    let covered: usize = (0..s.objects.len()).map(|k| r.mask(k).iter().filter(|&&v| v == 1.0).count()).sum();
    assert_eq!(bg.iter().filter(|b| !**b).count(), covered);
}

// --- templates ---------------------------------------------------------------

#[test]
fn templates_cover_all_families_and_module_kinds() {
    assert!(TEMPLATES.len() >= 10);
    for f in Family::ALL {
        assert!(TEMPLATES.iter().any(|t| t.family() == f), "{}", f.name());
    }
    let mut seen = std::collections::HashSet::new();
    for (i, t) in TEMPLATES.iter().enumerate() {
        let mut ok = false;
        for seed in 0..500u64 {
            let scene = generate_scene(seed, 3 + (seed % 6) as usize, SceneConfig::default()).unwrap();
            if let Ok(q) = generate_question(&scene, *t, seed * 31 + i as u64) {
                for (_, n) in q.program.root().preorder() {
                    seen.insert(std::mem::discriminant(&n.token));
                }
                ok = true;
                break;
            }
        }
        assert!(ok, "{} never instantiable", t.name());
    }
    for t in [
        Token::And,
        Token::Or,
        Token::Same(Attribute::Color),
        Token::Relate(Direction::Left),
        Token::Unique,
        Token::Compare(crate::program::CompareKind::Greater),
    ] {
        assert!(seen.contains(&std::mem::discriminant(&t)), "{t}");
    }
}

#[test]
fn generated_questions_are_consistent_with_the_oracle() {
    let mut made = 0;
    for seed in 0..300u64 {
        let scene = generate_scene(seed, 3 + (seed % 6) as usize, SceneConfig::default()).unwrap();
        for t in TEMPLATES {
            let Ok(q) = generate_question(&scene, t, seed) else { continue };
            made += 1;
            let run = symbolic_execute(&q.program, &scene);
            assert_eq!(run.answer, Some(q.answer));
            assert_eq!(run.truth_sets(), q.truth_sets);
            let (b, _) = brute_execute(&q.program, &scene);
            assert_eq!(b.answer_text(), Some(q.answer.to_string()));
            for ((_, n), set) in q.program.root().preorder().iter().zip(&q.truth_sets) {
                let needs = matches!(n.token, Token::Attention(_) | Token::Relate(_) | Token::Same(_));
                assert!(!needs || set.is_some(), "{}", q.program);
            }
            // Deterministic in the seed.
            assert_eq!(generate_question(&scene, t, seed).unwrap(), q);
        }
    }
    assert!(made > 1000);
}

#[test]
fn query_attribute_questions_do_not_name_the_answer() {
    for seed in 0..300u64 {
        let scene = generate_scene(seed, 6, SceneConfig::default()).unwrap();
        let Ok(q) = generate_question(&scene, Template::QueryAttr, seed) else { continue };
        let Answer::Value(v) = q.answer else { panic!("{}", q.program) };
        assert!(!q.program.to_string().contains(&format!("attention[{}]", v.name())), "{}", q.program);
    }
}

// --- datasets ----------------------------------------------------------------

fn small_cfg() -> DatasetConfig {
    DatasetConfig {
        scenes: 12,
        questions_per_scene: 5,
        seed: 9,
        resolution: 6,
        ..Default::default()
    }
}

#[test]
fn dataset_sample_count_follows_config() {
    let cfg = DatasetConfig {
        scenes: 1000,
        questions_per_scene: 10,
        resolution: 2,
        ..Default::default()
    };
    let ds = generate_dataset(&cfg).unwrap();
    assert_eq!(ds.samples.len(), 10_000);
    let per_family: usize = ds.header.answer_distribution.values().flat_map(|m| m.values()).sum();
    assert_eq!(per_family, 10_000);
    assert_eq!(ds.header.answer_distribution.len(), 5);
    // yes/no stay roughly balanced in the binary families
    for f in ["exist", "compare-numbers", "compare-attribute"] {
        let m = &ds.header.answer_distribution[f];
        let (y, n) = (m.get("yes").copied().unwrap_or(0) as i64, m.get("no").copied().unwrap_or(0) as i64);
        assert!((y - n).abs() <= 4, "{f}: {y} yes, {n} no");
    }
}

#[test]
fn dataset_files_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    build_dataset(&small_cfg(), a.path()).unwrap();
    build_dataset(&small_cfg(), b.path()).unwrap();
    for f in ["header.json", "scenes.jsonl", "samples.jsonl", "images.manifest", "images.bin"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(&small_cfg(), dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    for s in &back.samples {
        let p = compile(&s.program).unwrap();
        let run = symbolic_execute(&p, &back.scenes[s.scene]);
        assert_eq!(run.answer.unwrap().to_string(), s.answer);
    }
}

#[test]
fn corrupted_datasets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    build_dataset(&small_cfg(), dir.path()).unwrap();
    let samples = dir.path().join("samples.jsonl");
    let text = std::fs::read_to_string(&samples).unwrap();
    let first = text.lines().next().unwrap().to_string();
    std::fs::write(&samples, text.replacen(&first, "{\"id\": 3", 1)).unwrap();
    assert!(read_dataset(dir.path()).is_err());
    std::fs::write(&samples, &text).unwrap();
    let header = dir.path().join("header.json");
    let h = std::fs::read_to_string(&header).unwrap();
    std::fs::write(&header, h.replace("\"version\": 1", "\"version\": 7")).unwrap();
    assert!(matches!(
        read_dataset(dir.path()),
        Err(crate::Error::Format(crate::error::FormatError::Version { found: 7, .. }))
    ));
}
