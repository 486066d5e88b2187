from cgua.report import plot_cmc, plot_gallery_sweep, plot_history, write_table

PNG = b"\x89PNG"


def test_table(tmp_path):
    p = write_table(tmp_path / "t.tsv", ["a", "b"], [(1, 0.5), ("x", 2)], delimiter="\t")
    assert p.read_text() == "a\tb\n1\t0.500000\nx\t2\n"


def test_figures(tmp_path):
    hist = [{"epoch": 1, "loss": 1.0, "n_paired": 3, "n_unpaired": 2}, {"epoch": 2, "loss": 0.5, "n_paired": 4, "n_unpaired": 1}]
    for p in (
        plot_history(hist, tmp_path / "h.png"),
        plot_cmc({"a": {1: 0.5, 5: 0.9}}, tmp_path / "c.png"),
        plot_gallery_sweep({"a": {10: {"mAP": 0.9, "top1": 0.8}, 50: {"mAP": 0.7, "top1": 0.6}}}, tmp_path / "s" / "g.png"),
    ):
        assert p.read_bytes()[:4] == PNG
