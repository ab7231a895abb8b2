//! Write examples into checksummed record shards and read them back.

use canopy::record::{
    read_record_file, read_shards, shard_file_name, write_shards, BoxRecord, ExamplePayload,
};

fn main() {
    let examples: Vec<ExamplePayload> = (0..10)
        .map(|i| ExamplePayload {
            file_name: format!("tea_{i:04}.jpg"),
            width: 640,
            height: 480,
            image_bytes: vec![0xFF, 0xD8, i as u8],
            boxes: vec![BoxRecord {
                category_id: 1 + i % 3,
                xmin: 10.0 * i as f64,
                ymin: 20.0,
                xmax: 10.0 * i as f64 + 50.0,
                ymax: 90.0,
            }],
            labels: vec![["red_rust", "helopeltis", "red_spider_mite"][i as usize % 3].to_string()],
        })
        .collect();

    let dir = tempfile::tempdir().unwrap();
    let shards = write_shards(&examples, dir.path(), "train", 3).unwrap();
    for s in &shards {
        let bytes = std::fs::metadata(&s.path).unwrap().len();
        println!(
            "{}: {} records, {bytes} bytes",
            s.path.file_name().unwrap().to_string_lossy(),
            s.record_count
        );
    }

    let first = read_record_file(&dir.path().join(shard_file_name("train", 0, 3))).unwrap();
    println!("first shard holds {} raw payloads", first.len());

    let back = read_shards(dir.path(), "train", 3).unwrap();
    assert_eq!(back, examples);
    println!("read back {} examples in original order", back.len());
}
