"""Generate include/bsem/math/sobol_tables.hpp.

Primitive polynomials (modulo 2, encoded without leading/trailing bits) and
Joe-Kuo D6 direction-number initializers, reformatted from the QuantLib-derived
table file in the examples corpus into flat arrays.
"""
import re, sys

src = open("/root/proj/examples/quasi_monte_carlo_sobol_sequence_owen_scrambling/r004__Xilinx__Vitis-AI__sobolrsg.hpp").read()

# primitive polynomials, degrees 1..10
polys = []  # list of (degree, encoded)
for deg in range(1, 11):
    m = re.search(r"PrimitivePolynomialDegree%02d\[\]=\{(.*?)\};" % deg, src, re.S)
    body = re.sub(r"/\*.*?\*/", "", m.group(1), flags=re.S)
    vals = [int(v) for v in re.split(r"[,\s]+", body.strip()) if v.lstrip("-").isdigit()]
    if vals[-1] == -1:
        vals = vals[:-1]
    for v in vals:
        polys.append((deg, v))

# initializers for dimensions 2..129 (dim1..dim128 arrays)
inits = []
for k in range(1, 129):
    m = re.search(r"dim%dJoeKuoD6Init\[\]\s*=\s*\{(.*?)\};" % k, src)
    vals = [int(v) for v in m.group(1).split(",") if v.strip().isdigit()]
    assert vals[-1] == 0
    inits.append(vals[:-1])

need = 128  # polynomials for dimensions 2..129
polys = polys[:need]

with open("/root/proj/include/bsem/math/sobol_tables.hpp", "w") as f:
    f.write("#pragma once\n")
    f.write("// Sobol sequence tables: primitive polynomials modulo two and Joe-Kuo D6\n")
    f.write("// direction-number initializers (S. Joe & F. Y. Kuo, ACM TOMS 29 / SIAM JSC 30).\n")
    f.write("// Covers dimensions 2..129; dimension 1 is the degenerate van der Corput case.\n\n")
    f.write("#include <cstdint>\n\nnamespace bsem::sobol_tables {\n\n")
    f.write("inline constexpr int kMaxDimensions = 129;\n\n")
    f.write("inline constexpr int kPolyDegree[128] = {\n")
    f.write(",".join(str(d) for d, _ in polys))
    f.write("};\n\n")
    f.write("inline constexpr std::uint32_t kPolyEncoded[128] = {\n")
    f.write(",".join(str(v) for _, v in polys))
    f.write("};\n\n")
    f.write("// Initializers, flattened; kInitOffset[k] indexes the first m-value of\n")
    f.write("// dimension k+2, kPolyDegree[k] values follow.\n")
    flat, offs = [], []
    for deg_init, vals in zip(polys, inits):
        offs.append(len(flat))
        deg = deg_init[0]
        assert len(vals) <= deg, (deg, vals)
        flat.extend(vals)
    f.write("inline constexpr int kInitOffset[128] = {\n")
    f.write(",".join(str(o) for o in offs))
    f.write("};\n\n")
    f.write("inline constexpr int kInitCount[128] = {\n")
    f.write(",".join(str(len(v)) for v in inits))
    f.write("};\n\n")
    f.write("inline constexpr std::uint32_t kInitValues[%d] = {\n" % len(flat))
    f.write(",".join(str(v) for v in flat))
    f.write("};\n\n}  // namespace bsem::sobol_tables\n")
print("polys", len(polys), "inits", len(inits), "flat", sum(len(v) for v in inits))
