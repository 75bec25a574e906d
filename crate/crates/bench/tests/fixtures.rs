use wargame_bench::{blobs, mlp, pool};

#[test]
fn fixtures_have_bench_shapes() {
    let data = blobs();
    assert_eq!(data.len(), 200);
    let (x, _) = data.get(0);
    assert_eq!(mlp(1).logits(x).unwrap().len(), 10);
    assert_eq!(pool(3).len(), 3);
}

#[test]
fn fixtures_are_deterministic() {
    let data = blobs();
    let (x, _) = data.get(7);
    assert_eq!(mlp(4).logits(x).unwrap(), mlp(4).logits(x).unwrap());
}
