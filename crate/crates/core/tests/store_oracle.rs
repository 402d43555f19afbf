//! Exhaustive check of the author index against a brute-force filter+sort
//! over the full post table.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use paperfeed_core::model::StoredPost;
use paperfeed_core::store::disk::DiskStore;
use paperfeed_core::store::memory::MemoryStore;
use paperfeed_core::store::Store;
use paperfeed_core::time::Timestamp;

fn build_corpus(rng: &mut ChaCha8Rng, n_posts: usize, n_authors: usize) -> Vec<StoredPost> {
    (0..n_posts)
        .map(|i| {
            let author = format!("did:plc:a{:03}", rng.gen_range(0..n_authors));
            // coarse time grid to force created_at ties
            let at = rng.gen_range(0i64..2_000) * 1_000;
            StoredPost {
                uri: format!("at://{author}/p/{i:05}"),
                author_id: author,
                text: String::new(),
                links: vec![],
                arxiv_ids: vec![],
                created_at: Timestamp::from_micros(at),
                deleted: false,
                ingested_at: Timestamp::from_micros(at),
                quote_of: None,
            }
        })
        .collect()
}

fn brute_force(posts: &[StoredPost], author: &str, n: usize) -> Vec<String> {
    let mut rows: Vec<&StoredPost> = posts
        .iter()
        .filter(|p| p.author_id == author && !p.deleted)
        .collect();
    rows.sort_by(|a, b| {
        b.created_at
            .cmp(&a.created_at)
            .then_with(|| a.uri.cmp(&b.uri))
    });
    rows.into_iter().take(n).map(|p| p.uri.clone()).collect()
}

fn check_store(
    store: &dyn Store,
    posts: &mut [StoredPost],
    rng: &mut ChaCha8Rng,
    n_authors: usize,
) {
    for post in posts.iter() {
        store.put_post(post).unwrap();
    }
    for post in posts.iter_mut() {
        if rng.gen_range(0.0..1.0) < 0.05 {
            store.mark_deleted(&post.uri).unwrap();
            post.deleted = true;
        }
    }
    for a in 0..n_authors {
        let author = format!("did:plc:a{a:03}");
        for n in [1usize, 3, 10, usize::MAX] {
            let got: Vec<String> = store
                .recent_posts_by_author(&author, n)
                .unwrap()
                .into_iter()
                .map(|p| p.uri)
                .collect();
            assert_eq!(
                got,
                brute_force(posts, &author, n),
                "author {author}, n {n}"
            );
        }
    }
    // unknown author stays empty
    assert!(store
        .recent_posts_by_author("did:plc:ghost", 10)
        .unwrap()
        .is_empty());
}

#[test]
fn memory_author_index_matches_brute_force_on_10k_posts() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n_authors = 120;
    let mut posts = build_corpus(&mut rng, 10_000, n_authors);
    let store = Arc::new(MemoryStore::new());
    check_store(store.as_ref(), &mut posts, &mut rng, n_authors);
}

#[test]
fn disk_author_index_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let n_authors = 40;
    let mut posts = build_corpus(&mut rng, 1_200, n_authors);
    let dir = tempfile::tempdir().unwrap();
    let store = DiskStore::open(dir.path()).unwrap();
    check_store(&store, &mut posts, &mut rng, n_authors);
}
