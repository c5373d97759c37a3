mod common;

use common::{brute_recall, brute_top_k, hand_recall_case, random, rng};
use crossmodal::retrieval::{recall_at_k, recall_with, Direction, EmbeddingIndex, Scoring};
use crossmodal::tensor::Tensor;
use rand::Rng;

/// Entries on a 1/8 grid: every dot product is exact in f32, so ties are
/// real and must break toward the lower row.
fn grid(rows: usize, cols: usize, seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    let data = (0..rows * cols).map(|_| r.random_range(-8i32..=8) as f32 / 8.0).collect();
    Tensor::from_vec(&[rows, cols], data).unwrap()
}

fn check_against_brute(corpus: Tensor<f32>, queries: &Tensor<f32>) {
    let (m, _) = corpus.dims2().unwrap();
    let ids = (0..m).map(|i| format!("c{i}")).collect();
    let index = EmbeddingIndex::new(corpus.clone(), ids, Scoring::Dot).unwrap();
    let (nq, _) = queries.dims2().unwrap();
    for q in 0..nq {
        for k in [1, 5, 10] {
            let got: Vec<usize> = index.top_k_rows(queries.row(q), k).unwrap().iter().map(|h| h.0).collect();
            assert_eq!(got, brute_top_k(&corpus, queries.row(q), k), "query {q} k {k}");
            let named = index.top_k("q", queries.row(q), k).unwrap();
            let want: Vec<String> = got.iter().map(|i| format!("c{i}")).collect();
            assert_eq!(named.hits.iter().map(|h| h.0.clone()).collect::<Vec<_>>(), want);
        }
    }
}

#[test]
fn top_k_matches_full_sort_on_grid_corpora() {
    for (d, seed) in [(32, 1), (257, 2)] {
        check_against_brute(grid(1000, d, seed), &grid(100, d, seed + 100));
    }
}

#[test]
fn top_k_matches_full_sort_on_continuous_corpora() {
    for (d, seed) in [(32, 3), (257, 4)] {
        let mut r = rng(seed);
        let corpus = random::<f32>(&[1000, d], &mut r);
        let queries = random::<f32>(&[100, d], &mut r);
        check_against_brute(corpus, &queries);
    }
}

#[test]
fn hand_enumerated_recall() {
    let (s, i) = hand_recall_case();
    assert_eq!(recall_at_k(&s, &i, 1, Direction::SpeechToImage).unwrap(), 2.0 / 3.0);
    assert_eq!(recall_at_k(&s, &i, 2, Direction::SpeechToImage).unwrap(), 1.0);
    assert_eq!(recall_at_k(&s, &i, 3, Direction::SpeechToImage).unwrap(), 1.0);
}

#[test]
fn recall_matches_brute_force() {
    let mut r = rng(9);
    let s = random::<f32>(&[40, 8], &mut r);
    let noise = random::<f32>(&[40, 8], &mut r);
    let i = Tensor::from_vec(&[40, 8], s.data().iter().zip(noise.data()).map(|(a, b)| a + 0.8 * b).collect()).unwrap();
    let ks = [1, 3, 10];
    let got = recall_with(&s, &i, &ks, Direction::SpeechToImage, Scoring::Dot).unwrap();
    let back = recall_with(&s, &i, &ks, Direction::ImageToSpeech, Scoring::Dot).unwrap();
    for (j, &k) in ks.iter().enumerate() {
        assert_eq!(got[j], brute_recall(&s, &i, k));
        assert_eq!(back[j], brute_recall(&i, &s, k));
    }
}

#[test]
fn index_roundtrips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let m = grid(20, 6, 5);
    let ids: Vec<String> = (0..20).map(|i| format!("r{i}")).collect();
    EmbeddingIndex::new(m.clone(), ids.clone(), Scoring::Dot).unwrap().save(dir.path(), "x").unwrap();
    let back = EmbeddingIndex::<f32>::load(dir.path(), "x", Scoring::Dot).unwrap();
    assert_eq!(back.ids(), ids.as_slice());
    assert_eq!(back.top_k_rows(m.row(3), 4).unwrap(), EmbeddingIndex::new(m.clone(), ids, Scoring::Dot).unwrap().top_k_rows(m.row(3), 4).unwrap());
}
