"""Refinement table for the cell quantities: q11, nu^2, lambda_1^- and the layered q11 error."""
import argparse

import numpy as np

from perfhom.cell import build_model, homogenized_tensor, solve_cell_corrector
from perfhom.geometry import CellGeometry, build_cell_mesh
from perfhom.materials import preset_coefficients, preset_density


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ms", default="8,16,32,64")
    args = ap.parse_args()
    print(f"{'m':>4} {'q11':>20} {'nu2':>22} {'lambda1neg':>22} {'layered q11 - sqrt3':>20}")
    for m in (int(x) for x in args.ms.split(",")):
        mesh = build_cell_mesh(CellGeometry(m=m))
        a = preset_coefficients("identity", mesh)
        pos = build_model(mesh, a, preset_density("positive_avg", mesh))
        zero = build_model(mesh, a, preset_density("zero_avg", mesh))
        plain = build_cell_mesh(CellGeometry("square", None, m))
        al = preset_coefficients("layered", plain)
        ql = homogenized_tensor(plain, al, [solve_cell_corrector(plain, al, j) for j in (1, 2)])
        print(f"{m:4d} {float(pos.q[0, 0])!r:>20} {zero.nu2!r:>22} {pos.lambda1neg!r:>22} "
              f"{ql[0, 0] - np.sqrt(3):20.3e}")


if __name__ == "__main__":
    main()
