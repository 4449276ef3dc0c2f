from src.extrapolation_discrete import (
    discrete_bound_certificate,
    discrete_soundness_sweep,
    exact_rer_discrete,
    shifted_support_joint,
    sparse_connected_joint,
    uniform_joint,
)
from src.extrapolation_gaussian import (
    CorrelationSpec,
    exact_kappa_certificate,
    rer_bound_pairwise,
    pairwise_soundness_sweep,
    two_block_soundness_sweep,
)
from src.extrapolation_hermite import mehler_grid_error
from src.extrapolation_lowerbound import build_witness, equator_band, north_pole
from src.extrapolation_experiments import ExperimentConfig, compare_models, write_run_csv, write_summary_csv
from src.extrapolation_report_writer import generate_markdown_summary
import logging
import os

import numpy as np

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')

# 随机种子与输出目录
seed = 7
output_dir = "extrapolation_report"
# 置为 True 时运行桌面规模的训练实验（数分钟）
run_training = False

os.makedirs(output_dir, exist_ok=True)
sections = []


def mark(ok):
    return "✓" if ok else "✗"


# 离散分布：均匀分布与稀疏连通/平移支撑示例
U = uniform_joint((2, 2))
cert = discrete_bound_certificate(U, U)
exact = exact_rer_discrete(U, U)
print(f"{mark(abs(cert.bound - 2.0) < 1e-9 and abs(exact - 1.0) < 1e-9)} 均匀分布: 上界 {cert.bound:.6g}，精确值 {exact:.6g}")
sections.append(("离散均匀分布", {"bound": cert.bound, "exact": exact, "certificate": cert.certificate}))

P, Q = sparse_connected_joint(4), shifted_support_joint(4)
cert = discrete_bound_certificate(P, Q)
exact = exact_rer_discrete(P, Q)
print(f"{mark(1.0 < exact <= cert.bound)} 稀疏连通 vs 平移支撑: 上界 {cert.bound:.6g}，精确值 {exact:.6g}")
sections.append(("稀疏连通与平移支撑", {"bound": cert.bound, "exact": exact, "marginal_ratio": cert.marginal_ratio}))

sweep = discrete_soundness_sweep(200, 2, 5, seed, clusterable_every=10)
sweep.to_csv(os.path.join(output_dir, "discrete_sweep.csv"), index=False)
print(f"{mark(sweep['sound'].all() and sweep['cheeger_agrees'].all())} 离散随机实例 {len(sweep)} 个，上界全部成立")
sections.append(("离散随机实例", {
    "instances": len(sweep),
    "sound": int(sweep["sound"].sum()),
    "clusterable": int(sweep["clusterable"].sum()),
    "cheeger_agrees": int(sweep["cheeger_agrees"].sum()),
}))

# Mehler 展开
mehler = mehler_grid_error()
print(f"{mark(mehler['passed'].all())} Mehler 展开与闭式核一致（N = 60）")
sections.append(("Mehler 展开误差", mehler))

# 高斯分布：成对相关与两块结构
P = CorrelationSpec.standard(np.eye(2))
Q = CorrelationSpec.standard(np.array([[1.0, 0.8], [0.8, 1.0]]))
kappa = exact_kappa_certificate(P, Q)
print(f"{mark(abs(kappa.kappa - 1.8) < 1e-9)} 精确 kappa: {kappa.kappa:.6g}（上界 {rer_bound_pairwise(P):.6g}）")
sections.append(("高斯精确 kappa", {"exact": kappa.kappa, "argmax_level": kappa.argmax_level, "bound": rer_bound_pairwise(P)}))

pairs = pairwise_soundness_sweep(100, seed=seed)
pairs.to_csv(os.path.join(output_dir, "pairwise_sweep.csv"), index=False)
print(f"{mark(pairs['sound'].all())} 成对相关上界: {int(pairs['sound'].sum())}/{len(pairs)} 组成立")
sections.append(("成对相关上界检验", {"pairs": len(pairs), "sound": int(pairs["sound"].sum()), "max_kappa": float(pairs["kappa"].max())}))

blocks = two_block_soundness_sweep(5, 10, n_samples=50000, seed=seed)
blocks.to_csv(os.path.join(output_dir, "two_block_sweep.csv"), index=False)
print(f"{mark(blocks['sound'].all())} 两块结构上界（采样）: {int(blocks['sound'].sum())}/{len(blocks)} 个函数成立")
sections.append(("两块结构上界检验", {"functions": len(blocks), "sound": int(blocks["sound"].sum()), "max_ratio": float(blocks["ratio"].max())}))

# 下界构造：赤道带上为零、北极点处任意大
_, witness = build_witness(equator_band(500, 3, seed), north_pole(3), 0.5, scale=100.0)
print(f"{mark(witness.max_abs_on_p == 0.0 and witness.min_on_q >= 100.0)} 下界见证网络: {witness.n_centers} 个神经元")
sections.append(("下界见证网络", {
    "n_centers": witness.n_centers,
    "max_abs_on_p": witness.max_abs_on_p,
    "min_on_q": witness.min_on_q,
}))

# 结构化与非结构化网络的外推对比
if run_training:
    structured, unstructured = compare_models(ExperimentConfig(seed=seed))
    write_run_csv(structured, os.path.join(output_dir, "structured.csv"))
    write_run_csv(unstructured, os.path.join(output_dir, "unstructured.csv"))
    write_summary_csv([structured, unstructured], os.path.join(output_dir, "summary.csv"))
    advantage = unstructured.final_ood / structured.final_ood
    print(f"{mark(advantage >= 3.0)} 结构化网络 OOD 误差优势: {advantage:.3g} 倍")
    sections.append(("网络训练对比", {
        "structured_ood": structured.final_ood,
        "unstructured_ood": unstructured.final_ood,
        "structured_ratio": structured.ratio,
    }))

report_path = generate_markdown_summary(sections, os.path.join(output_dir, "summary.md"))
print(f"汇总报告已写入 {report_path}")
