use std::collections::BTreeSet;

use bitgnn_core::bitgemm::scan_zero_tiles;
use bitgnn_core::graph::{
    batch_schedule, build_batch, edge_cut, export_partition, import_partition, load_graph,
    pack_batch, partition, save_graph, unpack_batch, GraphFormat, SyntheticGraph, BALANCE_SLACK,
};
use bitgnn_core::QuantParams;

#[test]
fn files_to_compound_buffers() {
    let dir = tempfile::tempdir().unwrap();
    let g = SyntheticGraph {
        nodes: 1200,
        clusters: 12,
        intra_degree: 8.0,
        inter_degree: 0.5,
        feature_dim: 0,
    }
    .generate(21)
    .unwrap();

    let text = dir.path().join("g.txt");
    let bin = dir.path().join("g.bin");
    save_graph(&g, &text, GraphFormat::EdgeListText).unwrap();
    let loaded = load_graph(&text, GraphFormat::EdgeListText).unwrap();
    save_graph(&loaded, &bin, GraphFormat::Binary).unwrap();
    let loaded = load_graph(&bin, GraphFormat::Binary).unwrap();
    let want: BTreeSet<_> = g.edges().iter().collect();
    assert_eq!(loaded.edges().iter().collect::<BTreeSet<_>>(), want);

    let assign = partition(&loaded, 24, 4).unwrap();
    let cap = (1200usize.div_ceil(24) as f64 * (1.0 + BALANCE_SLACK)).floor() as usize;
    assert!(assign.sizes().iter().all(|&s| s <= cap));
    let parts = dir.path().join("parts.txt");
    export_partition(&parts, &assign).unwrap();
    let imported = import_partition(&parts, 1200, Some(24)).unwrap();
    assert_eq!(imported, assign);
    assert!(edge_cut(&loaded, &imported) < loaded.num_edges() / 4);

    let xq = QuantParams::new(0.0, 1.0, 1).unwrap();
    let mut nodes = 0;
    for ids in batch_schedule(24, 5) {
        let b = build_batch(&loaded, &imported, &ids, &xq, true).unwrap();
        b.check_block_diagonal().unwrap();
        assert!(scan_zero_tiles(b.adjacency()).unwrap().zero_count() > 0 || b.total_nodes() <= 128);
        let buf = pack_batch(&b);
        assert_eq!(buf.feature_bytes(), 0);
        assert_eq!(unpack_batch(&buf).unwrap(), b);
        nodes += b.total_nodes();
    }
    assert_eq!(nodes, 1200);
}
