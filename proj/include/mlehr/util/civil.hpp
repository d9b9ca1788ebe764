#pragma once

#include <string>

namespace mlehr::util {

// Days since 1970-01-01 for a proleptic Gregorian date, and the inverse.
long long days_from_civil(long long y, unsigned m, unsigned d);
void civil_from_days(long long z, long long& y, unsigned& m, unsigned& d);

// Whole minutes since the epoch as "YYYY-MM-DD HH:MM:00".
std::string format_iso_minutes(long long minutes);

}  // namespace mlehr::util
