#include <stdio.h>
#include <string.h>

int main(void)
{
    static const char input[] = {{INPUT}};
    char out[256];

    snprintf(out, sizeof out, input);
    if (strcmp(out, input) != 0) {
        fprintf(stderr, "VULNAUDIT_CRASH input interpreted as a format: \"%s\" -> \"%s\"\n", input, out);
        return 1;
    }
    return 0;
}
