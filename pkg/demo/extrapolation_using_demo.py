import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from src.extrapolation_reader import read_joint, read_correlation_spec, read_block_spec
from src.extrapolation_discrete import discrete_bound_certificate, exact_rer_discrete
from src.extrapolation_gaussian import exact_kappa, rer_bound_pairwise, rer_bound_two_block

inputs = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "extrapolation_data", "inputs")

P = read_joint(os.path.join(inputs, "banded_p.txt"))
Q = read_joint(os.path.join(inputs, "shifted_q.txt"))
cert = discrete_bound_certificate(P, Q)
print("离散分布（带状支撑 -> 平移支撑）:")
print(f"  谱上界 {cert.bound:.6g} = k / {cert.eigenvalue_name} × 边缘密度比 {cert.marginal_ratio:.6g}")
print(f"  精确误差比 {exact_rer_discrete(P, Q):.6g}")

P = read_correlation_spec(os.path.join(inputs, "identity.spec"))
Q = read_correlation_spec(os.path.join(inputs, "correlated.spec"))
print("\n高斯分布（独立 -> 相关系数 0.8）:")
print(f"  d / lambda_min 上界 {rer_bound_pairwise(P):.6g}")
print(f"  精确 kappa {exact_kappa(P, Q):.6g}")

B = read_block_spec(os.path.join(inputs, "two_block.spec"))
print("\n两块高斯分布:")
print(f"  2 / (1 - sigma_max) 上界 {rer_bound_two_block(B):.6g}")
