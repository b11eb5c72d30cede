#pragma once
// Sobol sequence tables: primitive polynomials modulo two and Joe-Kuo D6
// direction-number initializers (S. Joe & F. Y. Kuo, ACM TOMS 29 / SIAM JSC 30).
// Covers dimensions 2..129; dimension 1 is the degenerate van der Corput case.

#include <cstdint>

namespace bsem::sobol_tables {

inline constexpr int kMaxDimensions = 129;

inline constexpr int kPolyDegree[128] = {
1,2,3,3,4,4,5,5,5,5,5,5,6,6,6,6,6,6,7,7,7,7,7,7,7,7,7,7,7,7,7,7,7,7,7,7,8,8,8,8,8,8,8,8,8,8,8,8,8,8,8,8,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10};

inline constexpr std::uint32_t kPolyEncoded[128] = {
0,1,1,2,1,4,2,4,7,11,13,14,1,13,16,19,22,25,1,4,7,8,14,19,21,28,31,32,37,41,42,50,55,56,59,62,14,21,22,38,47,49,50,52,56,67,70,84,97,103,115,122,8,13,16,22,25,44,47,52,55,59,62,67,74,81,82,87,91,94,103,104,109,122,124,137,138,143,145,152,157,167,173,176,181,182,185,191,194,199,218,220,227,229,230,234,236,241,244,253,4,13,19,22,50,55,64,69,98,107,115,121,127,134,140,145,152,158,161,171,181,194,199,203,208,227,242,251};

// Initializers, flattened; kInitOffset[k] indexes the first m-value of
// dimension k+2, kPolyDegree[k] values follow.
inline constexpr int kInitOffset[128] = {
0,1,3,6,9,13,17,22,27,32,37,42,47,53,59,65,71,77,83,90,97,104,111,118,125,132,139,146,153,160,167,174,181,188,195,202,209,217,225,233,241,249,257,265,273,281,289,297,305,313,321,329,337,346,355,364,373,382,391,400,409,418,427,436,445,454,463,472,481,490,499,508,517,526,535,544,553,562,571,580,589,598,607,616,625,634,643,652,661,670,679,688,697,706,715,724,733,742,751,760,769,779,789,799,809,819,829,839,849,859,869,879,889,899,909,919,929,939,949,959,969,979,989,999,1009,1019,1029,1039};

inline constexpr int kInitCount[128] = {
1,2,3,3,4,4,5,5,5,5,5,5,6,6,6,6,6,6,7,7,7,7,7,7,7,7,7,7,7,7,7,7,7,7,7,7,8,8,8,8,8,8,8,8,8,8,8,8,8,8,8,8,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10,10};

inline constexpr std::uint32_t kInitValues[1049] = {
1,1,3,1,3,1,1,1,1,1,1,3,3,1,3,5,13,1,1,5,5,17,1,1,5,5,5,1,1,7,11,19,1,1,5,1,1,1,1,1,3,11,1,3,5,5,31,1,3,3,9,7,49,1,1,1,15,21,21,1,3,1,13,27,49,1,1,1,15,7,5,1,3,1,15,13,25,1,1,5,5,19,61,1,3,7,11,23,15,103,1,3,7,13,13,15,69,1,1,3,13,7,35,63,1,3,5,9,1,25,53,1,3,1,13,9,35,107,1,3,1,5,27,61,31,1,1,5,11,19,41,61,1,3,5,3,3,13,69,1,1,7,13,1,19,1,1,3,7,5,13,19,59,1,1,3,9,25,29,41,1,3,5,13,23,1,55,1,3,7,3,13,59,17,1,3,1,3,5,53,69,1,1,5,5,23,33,13,1,1,7,7,1,61,123,1,1,7,9,13,61,49,1,3,3,5,3,55,33,1,3,1,15,31,13,49,245,1,3,5,15,31,59,63,97,1,3,1,11,11,11,77,249,1,3,1,11,27,43,71,9,1,1,7,15,21,11,81,45,1,3,7,3,25,31,65,79,1,3,1,1,19,11,3,205,1,1,5,9,19,21,29,157,1,3,7,11,1,33,89,185,1,3,3,3,15,9,79,71,1,3,7,11,15,39,119,27,1,1,3,1,11,31,97,225,1,1,1,3,23,43,57,177,1,3,7,7,17,17,37,71,1,3,1,5,27,63,123,213,1,1,3,5,11,43,53,133,1,3,5,5,29,17,47,173,479,1,3,3,11,3,1,109,9,69,1,1,1,5,17,39,23,5,343,1,3,1,5,25,15,31,103,499,1,1,1,11,11,17,63,105,183,1,1,5,11,9,29,97,231,363,1,1,5,15,19,45,41,7,383,1,3,7,7,31,19,83,137,221,1,1,1,3,23,15,111,223,83,1,1,5,13,31,15,55,25,161,1,1,3,13,25,47,39,87,257,1,1,1,11,21,53,125,249,293,1,1,7,11,11,7,57,79,323,1,1,5,5,17,13,81,3,131,1,1,7,13,23,7,65,251,475,1,3,5,1,9,43,3,149,11,1,1,3,13,31,13,13,255,487,1,3,3,1,5,63,89,91,127,1,1,3,3,1,19,123,127,237,1,1,5,7,23,31,37,243,289,1,1,5,11,17,53,117,183,491,1,1,1,5,1,13,13,209,345,1,1,3,15,1,57,115,7,33,1,3,1,11,7,43,81,207,175,1,3,1,1,15,27,63,255,49,1,3,5,3,27,61,105,171,305,1,1,5,3,1,3,57,249,149,1,1,3,5,5,57,15,13,159,1,1,1,11,7,11,105,141,225,1,3,3,5,27,59,121,101,271,1,3,5,9,11,49,51,59,115,1,1,7,1,23,45,125,71,419,1,1,3,5,23,5,105,109,75,1,1,7,15,7,11,67,121,453,1,3,7,3,9,13,31,27,449,1,3,1,15,19,39,39,89,15,1,1,1,1,1,33,73,145,379,1,3,1,15,15,43,29,13,483,1,1,7,3,19,27,85,131,431,1,3,3,3,5,35,23,195,349,1,3,3,7,9,27,39,59,297,1,1,3,9,11,17,13,241,157,1,3,7,15,25,57,33,189,213,1,1,7,1,9,55,73,83,217,1,3,3,13,19,27,23,113,249,1,3,5,3,23,43,3,253,479,1,1,5,5,11,5,45,117,217,1,3,3,7,29,37,33,123,147,1,3,1,15,5,5,37,227,223,459,1,1,7,5,5,39,63,255,135,487,1,3,1,7,9,7,87,249,217,599,1,1,3,13,9,47,7,225,363,247,1,3,7,13,19,13,9,67,9,737,1,3,5,5,19,59,7,41,319,677,1,1,5,3,31,63,15,43,207,789,1,1,7,9,13,39,3,47,497,169,1,3,1,7,21,17,97,19,415,905,1,3,7,1,3,31,71,111,165,127,1,1,5,11,1,61,83,119,203,847,1,3,3,13,9,61,19,97,47,35,1,1,7,7,15,29,63,95,417,469,1,3,1,9,25,9,71,57,213,385,1,3,5,13,31,47,101,57,39,341,1,1,3,3,31,57,125,173,365,551,1,3,7,1,13,57,67,157,451,707,1,1,1,7,21,13,105,89,429,965,1,1,5,9,17,51,45,119,157,141,1,3,7,7,13,45,91,9,129,741,1,3,7,1,23,57,67,141,151,571,1,1,3,11,17,47,93,107,375,157,1,3,3,5,11,21,43,51,169,915,1,1,5,3,15,55,101,67,455,625,1,3,5,9,1,23,29,47,345,595,1,3,7,7,5,49,29,155,323,589,1,3,3,7,5,41,127,61,261,717,1,3,7,7,17,23,117,67,129,1009};

}  // namespace bsem::sobol_tables
